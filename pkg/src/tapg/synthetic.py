"""Seeded synthetic videos with plantable temporal structure.

Each video is a snippet feature matrix of Gaussian background noise. Every
action instance adds a constant bump on a class-specific channel across its
extent plus short transients on two dedicated channels around its start and
end, so boundary and confidence models have real signal to recover.
"""

from __future__ import annotations

import json

import numpy as np

from .data import FeatureSequence, GroundTruthInstance, VideoAnnotation


def class_name(index: int) -> str:
    return f"class_{index:02d}"


def _place_instances(rng, l_s, max_instances):
    """1-4 non-overlapping integer segments, each at least 3 snippets long."""
    n_target = int(rng.integers(1, max_instances + 1))
    taken: list[tuple[int, int]] = []
    for _ in range(40):
        if len(taken) >= n_target:
            break
        dur = max(3, int(round(rng.uniform(0.08, 0.4) * l_s)))
        if dur >= l_s - 2:
            dur = max(3, l_s // 3)
        start = int(rng.integers(1, l_s - dur))
        end = start + dur
        if all(end + 1 < s or start > e + 1 for s, e in taken):
            taken.append((start, end))
    taken.sort()
    return taken


def generate_synthetic_dataset(
    seed: int,
    n_videos: int,
    n_classes: int,
    feature_dim: int,
    snippet_range: tuple[int, int],
    stride_frames: int = 16,
    fps: float = 25.0,
    noise_amp: float = 0.35,
    bump_height: float = 1.5,
    transient_height: float = 2.0,
    max_instances: int = 4,
    validation_fraction: float = 0.25,
):
    """Build a deterministic toy dataset.

    Returns (feature sequences, annotations) where annotations follow the
    ActivityNet layout used by the rest of the pipeline. The last
    validation_fraction of videos is labeled "validation", the rest
    "training".
    """
    if n_videos < 1 or n_classes < 1:
        raise ValueError("n_videos and n_classes must be >= 1")
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    lo, hi = snippet_range
    if lo < 8 or hi < lo:
        raise ValueError(f"bad snippet_range {snippet_range}: need 8 <= lo <= hi")

    rng = np.random.default_rng(seed)
    bump_channels = max(1, feature_dim - 2)
    start_channel = feature_dim - 2 if feature_dim >= 2 else 0
    end_channel = feature_dim - 1

    sequences: list[FeatureSequence] = []
    annotations: dict[str, VideoAnnotation] = {}
    n_validation = max(1, int(round(n_videos * validation_fraction))) if n_videos > 1 else 0

    for v in range(n_videos):
        vid = f"v_{v:04d}"
        l_s = int(rng.integers(lo, hi + 1))
        features = noise_amp * rng.standard_normal((l_s, feature_dim))

        instances = []
        for start, end in _place_instances(rng, l_s, max_instances):
            k = int(rng.integers(n_classes))
            features[start:end, k % bump_channels] += bump_height
            s0 = max(0, start - 1)
            e0 = min(l_s, end + 1)
            features[s0 : start + 1, start_channel] += transient_height
            features[end - 1 : e0, end_channel] += transient_height
            sec = stride_frames / fps
            instances.append(
                GroundTruthInstance(start * sec, end * sec, class_name(k))
            )

        subset = "validation" if v >= n_videos - n_validation else "training"
        sequences.append(
            FeatureSequence(
                video_id=vid, stride_frames=stride_frames, fps=fps, features=features
            )
        )
        annotations[vid] = VideoAnnotation(
            duration=l_s * stride_frames / fps, subset=subset, instances=instances
        )
    return sequences, annotations


def generate_class_scores(
    annotations: dict[str, VideoAnnotation],
    n_classes: int,
    accuracy: float = 0.85,
    seed: int = 0,
) -> dict[str, dict[str, float]]:
    """Video-level class probabilities standing in for an external classifier.

    The classes actually present in a video share accuracy of the mass;
    the remainder is spread over the other classes, with a little seeded
    jitter so scores are not degenerate.
    """
    rng = np.random.default_rng(seed)
    names = [class_name(k) for k in range(n_classes)]
    out: dict[str, dict[str, float]] = {}
    for vid in sorted(annotations):
        present = sorted({gt.label for gt in annotations[vid].instances})
        probs = np.full(n_classes, 1.0 / n_classes)
        if present:
            probs = np.full(n_classes, (1.0 - accuracy) / max(1, n_classes - len(present)))
            for name in present:
                probs[names.index(name)] = accuracy / len(present)
        probs = probs * np.exp(0.05 * rng.standard_normal(n_classes))
        probs = probs / probs.sum()
        out[vid] = {name: float(p) for name, p in zip(names, probs)}
    return out


def save_class_scores(path, scores: dict[str, dict[str, float]]) -> None:
    with open(path, "w") as f:
        json.dump(scores, f, sort_keys=True, indent=1)
        f.write("\n")


def load_class_scores(path) -> dict[str, dict[str, float]]:
    with open(path) as f:
        raw = json.load(f)
    return {str(v): {str(c): float(p) for c, p in d.items()} for v, d in raw.items()}
