"""Detection metrics: temporal IoU, per-class AP and mAP over thresholds."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .postprocess import Detection

# tIoU grid 0.5:0.05:0.95 built from integers to keep the values tidy
DEFAULT_TIOU_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))
HEADLINE_THRESHOLDS = (0.5, 0.75, 0.95)


@dataclass
class EvalResult:
    map_by_tiou: dict[float, float]
    average_map: float
    ap_by_class: dict[str, dict[float, float]]


def tiou(a, b) -> float:
    """Temporal IoU of two (start, end) segments; disjoint or degenerate
    segments score 0."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def average_precision(
    dets_by_video: dict[str, list["Detection"]],
    gts_by_video: dict,
    label: str,
    threshold: float,
):
    """AP for one class at one tIoU threshold.

    Detections are ranked by descending score (ties keep input order) and
    greedily matched one-to-one to the same video's unmatched ground truth
    with the highest tIoU at or above the threshold. AP is the sum of the
    precisions at each true positive divided by the ground-truth count.
    Returns None when the class has no ground truth.
    """
    gt_segments = {
        vid: [(g.t_start, g.t_end) for g in gts if g.label == label]
        for vid, gts in gts_by_video.items()
    }
    n_gt = sum(len(v) for v in gt_segments.values())
    if n_gt == 0:
        return None

    ranked = sorted(
        (
            (det.score, order, vid, det.segment)
            for vid, dets in dets_by_video.items()
            for order, det in enumerate(dets)
            if det.label == label
        ),
        key=lambda item: (-item[0], item[2], item[1]),
    )
    matched = {vid: [False] * len(segs) for vid, segs in gt_segments.items()}

    true_positives = 0
    precision_sum = 0.0
    for rank, (_, _, vid, segment) in enumerate(ranked, start=1):
        best_iou, best_idx = 0.0, -1
        for idx, gt_seg in enumerate(gt_segments.get(vid, [])):
            if matched[vid][idx]:
                continue
            overlap = tiou(segment, gt_seg)
            if overlap > best_iou:
                best_iou, best_idx = overlap, idx
        if best_idx >= 0 and best_iou >= threshold:
            matched[vid][best_idx] = True
            true_positives += 1
            precision_sum += true_positives / rank
    return precision_sum / n_gt


def evaluate(
    dets_by_video: dict[str, list["Detection"]],
    gts_by_video: dict,
    thresholds=DEFAULT_TIOU_THRESHOLDS,
) -> EvalResult:
    """mAP per threshold (mean AP over classes present in the ground
    truth) and the average over all thresholds."""
    labels = sorted(
        {gt.label for gts in gts_by_video.values() for gt in gts}
    )
    if not labels:
        raise ValueError("ground truth is empty")

    ap_by_class: dict[str, dict[float, float]] = {label: {} for label in labels}
    map_by_tiou: dict[float, float] = {}
    for t in thresholds:
        aps = []
        for label in labels:
            ap = average_precision(dets_by_video, gts_by_video, label, t)
            ap_by_class[label][t] = ap
            aps.append(ap)
        map_by_tiou[t] = float(np.mean(aps))
    return EvalResult(
        map_by_tiou=map_by_tiou,
        average_map=float(np.mean(list(map_by_tiou.values()))),
        ap_by_class=ap_by_class,
    )


def format_report_table(result: EvalResult) -> str:
    """Plain-text row of mAP at the headline thresholds plus the average."""
    cols = [t for t in HEADLINE_THRESHOLDS if t in result.map_by_tiou]
    header = "  ".join(f"{t:>6.2f}" for t in cols) + "  Average"
    row = "  ".join(f"{result.map_by_tiou[t]:6.4f}" for t in cols)
    row += f"  {result.average_map:7.4f}"
    return f"mAP@tIoU\n{header}\n{row}"


def save_report(path, result: EvalResult) -> None:
    payload = {
        "mAP": {f"{t:.2f}": v for t, v in result.map_by_tiou.items()},
        "average_mAP": result.average_map,
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
