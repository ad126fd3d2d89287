"""Score fusion, proposal suppression, class assignment and ensembling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .boundary import BoundaryMap
from .evaluation import tiou
from .relation import ConfidenceMaps


@dataclass
class WindowTiming:
    """Maps window snippet coordinates back to seconds."""

    window_start: float
    snippet_scale: float
    seconds_per_snippet: float

    def to_seconds(self, w: float) -> float:
        return (self.window_start + w * self.snippet_scale) * self.seconds_per_snippet


@dataclass
class ProposalCandidate:
    t_start: float
    t_end: float
    boundary_score: float
    cc_score: float
    cr_score: float
    fused_score: float
    decayed_score: float


@dataclass
class Detection:
    segment: tuple[float, float]
    label: str
    score: float


def fuse_scores(
    mb: BoundaryMap,
    maps: ConfidenceMaps,
    timing: WindowTiming,
    top_k: int | None = 100,
    threshold: float | None = None,
) -> list[ProposalCandidate]:
    """Combine boundary and confidence maps into scored proposals.

    Each valid cell scores boundary * sqrt(cc * cr). Zero-duration cells
    (j = 0) cannot form a segment and are skipped. Kept proposals are the
    top_k by fused score (or all above the threshold when one is given),
    ordered by descending score with ties broken by cell position.
    """
    if mb.values.shape != maps.cc.shape or maps.cc.shape != maps.cr.shape:
        raise ValueError(
            f"map shapes differ: {mb.values.shape} vs {maps.cc.shape} vs {maps.cr.shape}"
        )
    duration_bins, length = mb.values.shape
    fused = mb.values * np.sqrt(maps.cc * maps.cr)

    cells = []
    for j in range(1, duration_bins):
        for i in range(length - j):
            cells.append((fused[j, i], j, i))
    cells.sort(key=lambda c: (-c[0], c[2], c[1]))
    if threshold is not None:
        cells = [c for c in cells if c[0] >= threshold]
    elif top_k is not None:
        cells = cells[:top_k]

    return [
        ProposalCandidate(
            t_start=timing.to_seconds(i),
            t_end=timing.to_seconds(i + j),
            boundary_score=float(mb.values[j, i]),
            cc_score=float(maps.cc[j, i]),
            cr_score=float(maps.cr[j, i]),
            fused_score=float(score),
            decayed_score=float(score),
        )
        for score, j, i in cells
    ]


def _soft_nms_order(segments, scores, sigma, keep_threshold, max_keep):
    """Shared Gaussian-decay suppression over (start, end) segments.

    Returns [(original index, decayed score)] in selection order; the
    first maximum wins on score ties.
    """
    remaining = list(range(len(segments)))
    current = list(scores)
    picked = []
    limit = len(segments) if max_keep is None else max_keep
    while remaining and len(picked) < limit:
        best = max(remaining, key=lambda k: (current[k], -k))
        if current[best] < keep_threshold:
            break
        remaining.remove(best)
        picked.append((best, current[best]))
        for k in remaining:
            overlap = tiou(segments[best], segments[k])
            current[k] *= math.exp(-(overlap * overlap) / sigma)
    return picked


def soft_nms(
    props: list[ProposalCandidate],
    sigma: float = 0.75,
    keep_threshold: float = 0.0,
    max_keep: int | None = None,
) -> list[ProposalCandidate]:
    """Gaussian Soft-NMS: repeatedly keep the highest-scoring proposal and
    decay the rest by exp(-tIoU^2 / sigma). Scores never increase and the
    global maximum is untouched."""
    segments = [(p.t_start, p.t_end) for p in props]
    scores = [p.decayed_score for p in props]
    picked = _soft_nms_order(segments, scores, sigma, keep_threshold, max_keep)
    return [replace(props[k], decayed_score=s) for k, s in picked]


def greedy_nms(
    props: list[ProposalCandidate], iou_threshold: float = 0.5
) -> list[ProposalCandidate]:
    """Hard suppression: keep the maximum, delete everything overlapping it
    above the threshold, repeat."""
    remaining = list(range(len(props)))
    kept = []
    while remaining:
        best = max(remaining, key=lambda k: (props[k].decayed_score, -k))
        kept.append(props[best])
        seg = (props[best].t_start, props[best].t_end)
        remaining = [
            k
            for k in remaining
            if k != best and tiou(seg, (props[k].t_start, props[k].t_end)) <= iou_threshold
        ]
    return kept


def assign_classes(
    props: list[ProposalCandidate],
    class_scores: dict[str, float],
    top_k: int = 2,
) -> list[Detection]:
    """Spawn one detection per proposal per top-k video-level class, scored
    as proposal score times class probability."""
    if not class_scores:
        raise ValueError("empty class score map")
    top = sorted(class_scores.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return [
        Detection(
            segment=(p.t_start, p.t_end), label=name, score=p.decayed_score * prob
        )
        for p in props
        for name, prob in top
    ]


def ensemble_maps(entries) -> tuple[BoundaryMap, ConfidenceMaps]:
    """Weighted elementwise combination of (boundary, confidence, weight)
    triples; weights are renormalized to sum to 1."""
    if not entries:
        raise ValueError("nothing to ensemble")
    shape = entries[0][0].values.shape
    weights = np.array([w for _, _, w in entries], dtype=np.float64)
    if np.any(weights < 0) or weights.sum() == 0:
        raise ValueError(f"weights must be >= 0 and not all zero, got {weights}")
    weights = weights / weights.sum()

    mb_sum = np.zeros(shape)
    cc_sum = np.zeros(shape)
    cr_sum = np.zeros(shape)
    for (mb, maps, _), w in zip(entries, weights):
        if mb.values.shape != shape or maps.cc.shape != shape:
            raise ValueError(
                f"ensemble shapes differ: {mb.values.shape} / {maps.cc.shape} vs {shape}"
            )
        mb_sum += w * mb.values
        cc_sum += w * maps.cc
        cr_sum += w * maps.cr
    mask = entries[0][0].valid_mask
    return (
        BoundaryMap(values=mb_sum, valid_mask=mask),
        ConfidenceMaps(cc=cc_sum, cr=cr_sum, valid_mask=mask),
    )


def multiscale_route(
    duration: float, results_by_scale: dict[int, list[Detection]]
) -> list[Detection]:
    """Pick one scale's detections by video duration: under 30 s uses the
    30 bucket, 30-120 s the 80 bucket, above 120 s the 100 bucket."""
    for scale in (30, 80, 100):
        if scale not in results_by_scale:
            raise ValueError(f"missing results for scale {scale}")
    if duration < 30.0:
        return results_by_scale[30]
    if duration <= 120.0:
        return results_by_scale[80]
    return results_by_scale[100]


def concat_ensemble(
    det_sets: list[list[Detection]], sigma: float = 0.75
) -> list[Detection]:
    """Concatenate detection sets for one video, then Soft-NMS per class."""
    pooled: list[Detection] = [d for dets in det_sets for d in dets]
    by_label: dict[str, list[Detection]] = {}
    for det in pooled:
        by_label.setdefault(det.label, []).append(det)

    out: list[Detection] = []
    for label in sorted(by_label):
        group = by_label[label]
        segments = [d.segment for d in group]
        scores = [d.score for d in group]
        picked = _soft_nms_order(segments, scores, sigma, 0.0, None)
        out.extend(replace(group[k], score=s) for k, s in picked)
    return out


def save_detections(path, dets_by_video: dict[str, list[Detection]], version="toy") -> None:
    results = {
        vid: [
            {"segment": [d.segment[0], d.segment[1]], "label": d.label, "score": d.score}
            for d in dets
        ]
        for vid, dets in sorted(dets_by_video.items())
    }
    payload = {"version": version, "results": results, "external_data": {}}
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_detections(path) -> dict[str, list[Detection]]:
    with open(path) as f:
        raw = json.load(f)
    if "results" not in raw:
        raise ValueError(f'{path}: missing "results" key')
    return {
        vid: [
            Detection(
                segment=(float(d["segment"][0]), float(d["segment"][1])),
                label=str(d["label"]),
                score=float(d["score"]),
            )
            for d in dets
        ]
        for vid, dets in raw["results"].items()
    }
