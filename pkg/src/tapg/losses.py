"""Training objectives: weighted logistic, smooth-L1 and the joint total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryHeatmaps
from .data import BoundaryLabels, LabelConfidenceMap
from .relation import ConfidenceMaps
from .sampling import SampledBatch

PROB_CLAMP = 1e-7
DEFAULT_BETA = 10.0
DEFAULT_GAMMA = 1e-4


@dataclass
class LossReport:
    l_cbg: float
    l_prb: float
    l_reg: float
    l_cls: float
    l2: float
    total: float
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA


def weighted_logistic_loss(p: np.ndarray, g: np.ndarray) -> float:
    """Class-frequency-weighted binary logistic loss.

    Positive and negative terms are scaled by l / l+ and l / l- so both
    classes contribute equally regardless of imbalance; a term whose class
    is absent is dropped. Predictions are clamped away from {0, 1}.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    total = len(p)
    if total == 0:
        raise ValueError("empty prediction array")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n_pos = float(g.sum())
    n_neg = total - n_pos
    loss = 0.0
    if n_pos > 0:
        loss -= (total / n_pos) * float((g * np.log(p)).sum()) / total
    if n_neg > 0:
        loss -= (total / n_neg) * float(((1.0 - g) * np.log(1.0 - p)).sum()) / total
    return loss


def weighted_logistic_grad(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Analytic d loss / d p: -(1/l) (a+ g / p - a- (1-g) / (1-p))."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = np.asarray(g, dtype=np.float64)
    total = p.size
    n_pos = float(g.sum())
    n_neg = total - n_pos
    grad = np.zeros_like(p)
    if n_pos > 0:
        grad -= (total / n_pos) * g / p / total
    if n_neg > 0:
        grad += (total / n_neg) * (1.0 - g) / (1.0 - p) / total
    return grad


def cbg_loss(heads: list[BoundaryHeatmaps], labels: BoundaryLabels) -> float:
    """Start plus end logistic loss, averaged over the supervision heads."""
    if not heads:
        raise ValueError("no supervision heads")
    per_head = [
        weighted_logistic_loss(h.start, labels.g_start)
        + weighted_logistic_loss(h.end, labels.g_end)
        for h in heads
    ]
    return float(np.mean(per_head))


def smooth_l1(pred, target) -> float:
    """Mean smooth-L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    x = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    per = np.where(x < 1.0, 0.5 * x * x, x - 0.5)
    return float(per.mean())


def smooth_l1_grad(pred, target) -> np.ndarray:
    x = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.where(np.abs(x) < 1.0, x, np.sign(x)) / x.size


def regression_support(
    labels: LabelConfidenceMap, batch: SampledBatch
) -> np.ndarray:
    """(D, T) mask of cells entering the regression loss: every valid cell
    with a positive label plus the sampled negatives."""
    support = labels.valid_mask & (labels.values > 0)
    for j, i in batch.negatives:
        support[j, i] = True
    return support


def prb_loss(
    maps: ConfidenceMaps, labels: LabelConfidenceMap, batch: SampledBatch
) -> tuple[float, float]:
    """(regression, classification) losses for the confidence maps.

    Regression is smooth-L1 over the support cells; classification is the
    weighted logistic loss over the sampled batch with binary targets
    label > 0.7.
    """
    cells = batch.positives + batch.negatives
    if not cells:
        raise ValueError("empty sampled batch")
    for j, i in cells:
        if not labels.valid_mask[j, i]:
            raise ValueError(f"sampled cell ({j}, {i}) is not valid")

    support = regression_support(labels, batch)
    l_reg = smooth_l1(maps.cr[support], labels.values[support])

    rows = np.array([c[0] for c in cells])
    cols = np.array([c[1] for c in cells])
    targets = (labels.values[rows, cols] > 0.7).astype(np.float64)
    l_cls = weighted_logistic_loss(maps.cc[rows, cols], targets)
    return l_reg, l_cls


def total_loss(
    l_cbg: float,
    l_reg: float,
    l_cls: float,
    l2: float,
    beta: float = DEFAULT_BETA,
    gamma: float = DEFAULT_GAMMA,
) -> LossReport:
    """Combine the objectives: cbg + beta * (reg + cls) + gamma * l2."""
    for name, v in (("l_cbg", l_cbg), ("l_reg", l_reg), ("l_cls", l_cls), ("l2", l2)):
        if not np.isfinite(v):
            raise ValueError(f"{name} is not finite: {v}")
    l_prb = l_reg + l_cls
    return LossReport(
        l_cbg=float(l_cbg),
        l_prb=float(l_prb),
        l_reg=float(l_reg),
        l_cls=float(l_cls),
        l2=float(l2),
        total=float(l_cbg + beta * l_prb + gamma * l2),
        beta=beta,
        gamma=gamma,
    )
