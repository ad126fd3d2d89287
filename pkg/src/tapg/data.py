"""Dataset types, sliding-window construction and training-label assignment.

Time conventions: ground-truth annotations are stored in seconds; inside an
observation window every coordinate is a window snippet index. One snippet
covers ``stride_frames / fps`` seconds of video.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import as_matrix, linear_resize


class ParseError(ValueError):
    """Raised when an input file does not match its schema."""


@dataclass
class GroundTruthInstance:
    """A temporally annotated action instance.

    Units are seconds at the video level and window snippet indices once
    attached to an ObservationWindow.
    """

    t_start: float
    t_end: float
    label: str

    def __post_init__(self):
        if not (0.0 <= self.t_start < self.t_end):
            raise ValueError(
                f"invalid instance [{self.t_start}, {self.t_end}]: "
                "need 0 <= t_start < t_end"
            )

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class VideoAnnotation:
    duration: float
    subset: str
    instances: list[GroundTruthInstance]


@dataclass
class FeatureSequence:
    """Per-video snippet feature matrix extracted at a fixed frame stride."""

    video_id: str
    stride_frames: int
    fps: float
    features: np.ndarray  # (l_s, C)

    def __post_init__(self):
        self.features = as_matrix(self.features, f"features[{self.video_id}]")
        if self.stride_frames < 1:
            raise ValueError(f"stride_frames must be >= 1, got {self.stride_frames}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def num_snippets(self) -> int:
        return self.features.shape[0]

    @property
    def duration(self) -> float:
        """Video duration in seconds covered by the snippet grid."""
        return self.num_snippets * self.stride_frames / self.fps

    @property
    def snippets_per_second(self) -> float:
        return self.fps / self.stride_frames


@dataclass
class ObservationWindow:
    """A fixed-length slice of a feature sequence with window-relative GT.

    window_start and snippet_scale map window coordinates back to the
    original snippet grid: original = window_start + w * snippet_scale.
    """

    video_id: str
    window_start: float
    features: np.ndarray  # (l_w, C)
    gts: list[GroundTruthInstance] = field(default_factory=list)
    snippet_scale: float = 1.0

    def __post_init__(self):
        self.features = as_matrix(self.features, "window features")

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class BoundaryLabels:
    """Binary per-snippet starting/ending region labels."""

    g_start: np.ndarray
    g_end: np.ndarray


@dataclass
class LabelConfidenceMap:
    """Max-IoU training target for every densely enumerated proposal.

    Cell (j, i) is the proposal [i, i + j] in window snippet coordinates;
    cells with i + j >= T are invalid and held at zero.
    """

    values: np.ndarray  # (D, T)
    valid_mask: np.ndarray  # (D, T) bool


def valid_cell_mask(duration_bins: int, length: int) -> np.ndarray:
    """(D, T) boolean mask of proposal cells with i + j < T."""
    j = np.arange(duration_bins)[:, None]
    i = np.arange(length)[None, :]
    return i + j < length


def _window_instances(
    gts,
    lo: float,
    hi: float,
    scale: float = 1.0,
    min_inside: float = 0.5,
) -> list[GroundTruthInstance]:
    """Clip snippet-coordinate instances to [lo, hi] and rescale.

    Instances keeping less than min_inside of their duration inside the
    window are dropped.
    """
    kept = []
    for gt in gts:
        s = max(gt.t_start, lo)
        e = min(gt.t_end, hi)
        if e - s <= 0:
            continue
        if gt.duration > 0 and (e - s) / gt.duration < min_inside:
            continue
        kept.append(
            GroundTruthInstance((s - lo) * scale, (e - lo) * scale, gt.label)
        )
    return kept


def gts_to_snippets(gts, fs: FeatureSequence) -> list[GroundTruthInstance]:
    """Convert second-based instances to the video's snippet grid."""
    factor = fs.snippets_per_second
    return [
        GroundTruthInstance(gt.t_start * factor, gt.t_end * factor, gt.label)
        for gt in gts
    ]


def build_windows(
    fs: FeatureSequence,
    gts,
    l_w: int,
    overlap: float = 0.75,
    min_inside: float = 0.5,
) -> list[ObservationWindow]:
    """Slice a feature sequence into overlapping fixed-length windows.

    Window starts advance by round(l_w * (1 - overlap)); a final window
    flushed to the sequence end covers any leftover snippets. Windows
    whose clipped ground-truth list is empty are discarded. Sequences
    shorter than l_w fall back to a single rescaled window.
    """
    if l_w < 2:
        raise ValueError(f"l_w must be >= 2, got {l_w}")
    if not (0.0 <= overlap < 1.0):
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")

    snippet_gts = gts_to_snippets(gts, fs)
    l_s = fs.num_snippets
    if l_s < l_w:
        win = rescale_to_window(fs, gts, l_w, min_inside=min_inside)
        return [win] if win.gts else []

    stride = max(1, round(l_w * (1.0 - overlap)))
    starts = list(range(0, l_s - l_w + 1, stride))
    if starts[-1] + l_w < l_s:
        starts.append(l_s - l_w)

    windows = []
    for start in starts:
        kept = _window_instances(
            snippet_gts, start, start + l_w, min_inside=min_inside
        )
        if not kept:
            continue
        windows.append(
            ObservationWindow(
                video_id=fs.video_id,
                window_start=float(start),
                features=fs.features[start : start + l_w],
                gts=kept,
            )
        )
    return windows


def rescale_to_window(
    fs: FeatureSequence,
    gts=(),
    l_w: int = 100,
    min_inside: float = 0.5,
) -> ObservationWindow:
    """Turn a whole video into one window of length l_w.

    Features are linearly resized and ground-truth coordinates scaled by
    l_w / l_s.
    """
    l_s = fs.num_snippets
    if l_s < 1:
        raise ValueError("empty feature sequence")
    scale = l_w / l_s
    kept = _window_instances(
        gts_to_snippets(gts, fs), 0.0, float(l_s), scale=scale, min_inside=min_inside
    )
    features = fs.features if l_s == l_w else linear_resize(fs.features, l_w)
    return ObservationWindow(
        video_id=fs.video_id,
        window_start=0.0,
        features=features,
        gts=kept,
        snippet_scale=l_s / l_w,
    )


def label_boundaries(window: ObservationWindow) -> BoundaryLabels:
    """Mark snippets lying in any instance's starting or ending region.

    The region around a boundary extends one tenth of the instance
    duration to each side; membership is tested on integer snippet
    centers with closed intervals.
    """
    if not window.gts:
        raise ValueError("window has no ground-truth instances")
    l_w = window.length
    centers = np.arange(l_w, dtype=np.float64)
    g_start = np.zeros(l_w, dtype=np.float64)
    g_end = np.zeros(l_w, dtype=np.float64)
    for gt in window.gts:
        radius = gt.duration / 10.0
        g_start[(centers >= gt.t_start - radius) & (centers <= gt.t_start + radius)] = 1.0
        g_end[(centers >= gt.t_end - radius) & (centers <= gt.t_end + radius)] = 1.0
    return BoundaryLabels(g_start=g_start, g_end=g_end)


def label_confidence_map(window: ObservationWindow, duration_bins: int) -> LabelConfidenceMap:
    """Max temporal IoU of every proposal cell against the window's GT."""
    if duration_bins < 1:
        raise ValueError(f"duration_bins must be >= 1, got {duration_bins}")
    length = window.length
    mask = valid_cell_mask(duration_bins, length)
    values = np.zeros((duration_bins, length), dtype=np.float64)

    starts = np.arange(length, dtype=np.float64)[None, :]
    durations = np.arange(duration_bins, dtype=np.float64)[:, None]
    ends = starts + durations
    for gt in window.gts:
        inter = np.minimum(ends, gt.t_end) - np.maximum(starts, gt.t_start)
        np.clip(inter, 0.0, None, out=inter)
        union = durations + gt.duration - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(union > 0, inter / union, 0.0)
        np.maximum(values, iou, out=values)
    values[~mask] = 0.0
    return LabelConfidenceMap(values=values, valid_mask=mask)


# ---------------------------------------------------------------------------
# file formats


def load_annotations(path) -> dict[str, VideoAnnotation]:
    """Read an ActivityNet-style annotation file.

    Schema: {"database": {video_id: {"duration_second": number,
    "subset": str, "annotations": [{"segment": [s, e], "label": str}]}}}.
    """
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict) or "database" not in raw:
        raise ParseError(f'{path}: missing top-level "database" key')

    out: dict[str, VideoAnnotation] = {}
    for vid, entry in raw["database"].items():
        for key in ("duration_second", "subset", "annotations"):
            if key not in entry:
                raise ParseError(f'{path}: video {vid}: missing field "{key}"')
        instances = []
        for n, ann in enumerate(entry["annotations"]):
            if "segment" not in ann or "label" not in ann:
                raise ParseError(
                    f"{path}: video {vid}: annotation {n}: "
                    'missing "segment" or "label"'
                )
            seg = ann["segment"]
            try:
                instances.append(
                    GroundTruthInstance(float(seg[0]), float(seg[1]), str(ann["label"]))
                )
            except (ValueError, IndexError, TypeError) as exc:
                raise ParseError(
                    f"{path}: video {vid}: annotation {n}: {exc}"
                ) from None
        out[vid] = VideoAnnotation(
            duration=float(entry["duration_second"]),
            subset=str(entry["subset"]),
            instances=instances,
        )
    return out


def save_annotations(path, annotations: dict[str, VideoAnnotation]) -> None:
    db = {
        vid: {
            "duration_second": ann.duration,
            "subset": ann.subset,
            "annotations": [
                {"segment": [gt.t_start, gt.t_end], "label": gt.label}
                for gt in ann.instances
            ],
        }
        for vid, ann in sorted(annotations.items())
    }
    with open(path, "w") as f:
        json.dump({"database": db}, f, sort_keys=True, indent=1)
        f.write("\n")


def load_features(path) -> FeatureSequence:
    """Read one video's feature sequence from JSON."""
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    for key in ("video_id", "stride_frames", "fps", "features"):
        if key not in raw:
            raise ParseError(f'{path}: missing field "{key}"')
    try:
        return FeatureSequence(
            video_id=str(raw["video_id"]),
            stride_frames=int(raw["stride_frames"]),
            fps=float(raw["fps"]),
            features=np.asarray(raw["features"], dtype=np.float64),
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_features(path, fs: FeatureSequence) -> None:
    # json emits shortest round-trip decimals, so float64 survives exactly
    payload = {
        "video_id": fs.video_id,
        "stride_frames": fs.stride_frames,
        "fps": fs.fps,
        "features": fs.features.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")
