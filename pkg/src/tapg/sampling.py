"""Two-stage balanced sampling of proposal cells for training.

Stage one draws positives (label > pos_threshold) and negatives
(label < neg_threshold) at a 1:1 ratio. Stage two re-weights the draw
across normalized proposal-duration regions so rare durations are not
drowned out: region ratios below the boost threshold are lifted along an
exponential ramp before renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabelConfidenceMap

DEFAULT_SCALE_REGIONS = ((0.0, 0.3), (0.3, 0.7), (0.7, 1.0))


@dataclass
class SamplerConfig:
    boost_lambda: float = 0.15
    scale_regions: tuple = DEFAULT_SCALE_REGIONS
    pos_threshold: float = 0.7
    neg_threshold: float = 0.3
    target_pos_neg_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.boost_lambda <= 1.0):
            raise ValueError(f"boost_lambda must be in (0, 1], got {self.boost_lambda}")
        if self.neg_threshold > self.pos_threshold:
            raise ValueError("neg_threshold must not exceed pos_threshold")
        if self.target_pos_neg_ratio <= 0:
            raise ValueError("target_pos_neg_ratio must be positive")
        edges = [r[0] for r in self.scale_regions] + [self.scale_regions[-1][1]]
        if edges[0] != 0.0 or edges[-1] != 1.0 or sorted(edges) != edges:
            raise ValueError(f"scale_regions must partition [0, 1], got {self.scale_regions}")

    def class_targets(self, count: int) -> tuple[int, int]:
        """(positive, negative) draw targets for a batch of the given size."""
        ratio = self.target_pos_neg_ratio
        n_pos = int(round(count * ratio / (1.0 + ratio)))
        return n_pos, count - n_pos


@dataclass
class SampledBatch:
    """Cells are (j, i) pairs; positives and negatives are disjoint."""

    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]
    shortfall: int = 0


def scale_balanced_ratio(r: float, boost_lambda: float) -> float:
    """Boosted sampling ratio for one duration region.

    Ratios at or below the threshold are lifted along
    lambda * exp(r / lambda - 1); larger ratios pass through unchanged,
    and the two branches agree at the threshold. Zero stays zero.
    """
    if not (0.0 <= r <= 1.0):
        raise ValueError(f"ratio must be in [0, 1], got {r}")
    if not (0.0 < boost_lambda <= 1.0):
        raise ValueError(f"boost_lambda must be in (0, 1], got {boost_lambda}")
    if r == 0.0:
        return 0.0
    if r <= boost_lambda:
        return boost_lambda * np.exp(r / boost_lambda - 1.0)
    return r


def _candidate_cells(labels: LabelConfidenceMap, cfg: SamplerConfig):
    """(positives, negatives) as arrays of (j, i) valid cells."""
    values = labels.values
    pos = np.argwhere(labels.valid_mask & (values > cfg.pos_threshold))
    neg = np.argwhere(labels.valid_mask & (values < cfg.neg_threshold))
    return pos, neg


def iou_balanced_sample(
    labels: LabelConfidenceMap, cfg: SamplerConfig, count: int, rng=None
) -> SampledBatch:
    """Uniform 1:1 positive/negative draw without replacement.

    A class with fewer candidates than count // 2 shrinks to what is
    available; the missing number is reported as the shortfall.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    pos, neg = _candidate_cells(labels, cfg)
    if len(pos) == 0 and len(neg) == 0:
        raise ValueError("no positive or negative candidates to sample")
    n_pos, n_neg = cfg.class_targets(count)

    def draw(cands, target):
        take = min(target, len(cands))
        if take == 0:
            return []
        idx = rng.choice(len(cands), size=take, replace=False)
        return [tuple(map(int, cands[k])) for k in idx]

    positives = draw(pos, n_pos)
    negatives = draw(neg, n_neg)
    shortfall = n_pos + n_neg - len(positives) - len(negatives)
    return SampledBatch(positives=positives, negatives=negatives, shortfall=shortfall)


def region_probabilities(
    cells: np.ndarray, length: int, cfg: SamplerConfig
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Renormalized boosted probabilities per duration region.

    Cells are (j, i) pairs; a cell's normalized duration is j / length.
    Returns (probabilities, cell indices per region). Empty regions keep
    probability zero and their mass goes to the others proportionally.
    """
    scaled = cells[:, 0] / length if len(cells) else np.zeros(0)
    members = []
    for n, (lo, hi) in enumerate(cfg.scale_regions):
        last = n == len(cfg.scale_regions) - 1
        inside = (scaled >= lo) & ((scaled <= hi) if last else (scaled < hi))
        members.append(np.flatnonzero(inside))
    counts = np.array([len(m) for m in members], dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return np.zeros(len(members)), members
    boosted = np.array(
        [scale_balanced_ratio(c / total, cfg.boost_lambda) for c in counts]
    )
    return boosted / boosted.sum(), members


def scale_balanced_sample(
    labels: LabelConfidenceMap, cfg: SamplerConfig, count: int, rng=None
) -> SampledBatch:
    """Stage-two draw: pick a duration region by boosted probability,
    then a cell uniformly inside it, keeping the 1:1 class ratio.

    Within one batch cells are drawn without replacement; an exhausted
    region passes its remaining mass to the others.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    pos, neg = _candidate_cells(labels, cfg)
    if len(pos) == 0 and len(neg) == 0:
        raise ValueError("no positive or negative candidates to sample")
    length = labels.values.shape[1]
    n_pos, n_neg = cfg.class_targets(count)

    def draw(cands, target):
        probs, members = region_probabilities(cands, length, cfg)
        pools = [list(m) for m in members]
        picked = []
        weights = probs.copy()
        for _ in range(min(target, len(cands))):
            open_regions = np.array([len(p) > 0 for p in pools])
            w = np.where(open_regions, weights, 0.0)
            if w.sum() == 0:
                break
            region = int(rng.choice(len(pools), p=w / w.sum()))
            pool = pools[region]
            cell = pool.pop(int(rng.integers(len(pool))))
            picked.append(tuple(map(int, cands[cell])))
        return picked

    positives = draw(pos, n_pos)
    negatives = draw(neg, n_neg)
    shortfall = n_pos + n_neg - len(positives) - len(negatives)
    return SampledBatch(positives=positives, negatives=negatives, shortfall=shortfall)
