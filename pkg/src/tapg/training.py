"""Toy-scale fitting loop with hand-derived gradients and Adam updates.

Gradients are analytic backpropagation through the boundary and confidence
branches (see the *_backward functions of those modules); a finite
difference check in the test suite pins them down. The sampled proposal
batches are drawn once per fit from the seed, so each recorded loss is a
pure function of the parameters at that step.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass

import numpy as np

from .boundary import cbg_backward, cbg_forward_cached
from .data import (
    BoundaryLabels,
    LabelConfidenceMap,
    ObservationWindow,
    label_boundaries,
    label_confidence_map,
)
from .losses import (
    DEFAULT_BETA,
    DEFAULT_GAMMA,
    LossReport,
    cbg_loss,
    prb_loss,
    regression_support,
    smooth_l1_grad,
    total_loss,
    weighted_logistic_grad,
)
from .model import ModelParams, l2_norm, param_items
from .relation import prb_backward, prb_forward_cached
from .sampling import SampledBatch, SamplerConfig, scale_balanced_sample


@dataclass
class TrainingExample:
    window: ObservationWindow
    boundary: BoundaryLabels
    confidence: LabelConfidenceMap


def prepare_examples(windows, duration_bins: int) -> list[TrainingExample]:
    return [
        TrainingExample(
            window=w,
            boundary=label_boundaries(w),
            confidence=label_confidence_map(w, duration_bins),
        )
        for w in windows
    ]


def _classification_targets(labels: LabelConfidenceMap, cells):
    rows = np.array([c[0] for c in cells])
    cols = np.array([c[1] for c in cells])
    return rows, cols, (labels.values[rows, cols] > 0.7).astype(np.float64)


def example_losses(
    model: ModelParams,
    example: TrainingExample,
    batch: SampledBatch,
    duration_bins: int,
    with_grads: bool,
    beta: float = DEFAULT_BETA,
):
    """Losses for one window, optionally with parameter gradients.

    Returns (l_cbg, l_reg, l_cls, grads or None). The regression and
    classification gradients carry the beta factor so the returned grads
    are for l_cbg + beta * (l_reg + l_cls).
    """
    heads, _, cbg_cache = cbg_forward_cached(model.cbg, example.window.features)
    base_out = cbg_cache["base"][3]
    maps, prb_cache = prb_forward_cached(model.prb, base_out, duration_bins)

    l_cbg = cbg_loss(heads, example.boundary)
    l_reg, l_cls = prb_loss(maps, example.confidence, batch)
    if not with_grads:
        return l_cbg, l_reg, l_cls, None

    n_heads = len(heads)
    grad_heads = [
        (
            weighted_logistic_grad(h.start, example.boundary.g_start) / n_heads,
            weighted_logistic_grad(h.end, example.boundary.g_end) / n_heads,
        )
        for h in heads
    ]

    support = regression_support(example.confidence, batch)
    d_cr = np.zeros_like(maps.cr)
    d_cr[support] = beta * smooth_l1_grad(
        maps.cr[support], example.confidence.values[support]
    )

    cells = batch.positives + batch.negatives
    rows, cols, targets = _classification_targets(example.confidence, cells)
    d_cc = np.zeros_like(maps.cc)
    d_cc[rows, cols] = beta * weighted_logistic_grad(maps.cc[rows, cols], targets)

    grads, d_base = prb_backward(model.prb, prb_cache, d_cc, d_cr)
    grads.update(cbg_backward(model.cbg, cbg_cache, grad_heads, grad_base_extra=d_base))
    return l_cbg, l_reg, l_cls, grads


def _draw_batches(examples, cfg: SamplerConfig, count: int, rng) -> list[SampledBatch]:
    return [
        scale_balanced_sample(ex.confidence, cfg, count, rng=rng) for ex in examples
    ]


def _batch_pass(model, examples, batches, duration_bins, with_grads, beta, gamma):
    sums = np.zeros(3)
    acc: dict[str, np.ndarray] = {}
    for ex, batch in zip(examples, batches):
        l_cbg, l_reg, l_cls, grads = example_losses(
            model, ex, batch, duration_bins, with_grads, beta
        )
        sums += (l_cbg, l_reg, l_cls)
        if grads:
            for key, g in grads.items():
                if key in acc:
                    acc[key] += g
                else:
                    acc[key] = g.copy()
    n = len(examples)
    report = total_loss(
        sums[0] / n, sums[1] / n, sums[2] / n, l2_norm(model), beta=beta, gamma=gamma
    )
    if with_grads:
        for key in acc:
            acc[key] /= n
    return report, acc


def fit_toy(
    model: ModelParams,
    examples: list[TrainingExample],
    steps: int,
    step_size: float,
    seed: int,
    duration_bins: int,
    sampler: SamplerConfig | None = None,
    sample_count: int = 32,
    beta: float = DEFAULT_BETA,
    gamma: float = DEFAULT_GAMMA,
) -> tuple[ModelParams, list[LossReport]]:
    """Adam descent on the joint objective over a fixed example set.

    The per-window proposal batches are drawn once from the seed and held
    fixed, so the recorded loss is a pure function of the parameters (a
    zero step size yields an identical loss at every step). Returns an
    updated copy of the parameters and a trace of steps + 1 entries: the
    loss after k updates for k = 0..steps.
    """
    if not examples:
        raise ValueError("no training examples")
    model = copy.deepcopy(model)
    sampler = sampler or SamplerConfig()
    batches = _draw_batches(
        examples, sampler, sample_count, np.random.default_rng(seed)
    )

    names = [name for name, _ in param_items(model)]
    arrays = dict(param_items(model))
    m_state = {k: np.zeros_like(a) for k, a in arrays.items()}
    v_state = {k: np.zeros_like(a) for k, a in arrays.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    trace: list[LossReport] = []
    for step in range(1, steps + 1):
        try:
            report, grads = _batch_pass(
                model, examples, batches, duration_bins, True, beta, gamma
            )
        except ValueError as exc:
            raise RuntimeError(f"aborting at step {step}: {exc}") from exc
        trace.append(report)  # loss before this step's update

        for key in names:
            g = grads[key] + 2.0 * gamma * arrays[key]
            m_state[key] = beta1 * m_state[key] + (1.0 - beta1) * g
            v_state[key] = beta2 * v_state[key] + (1.0 - beta2) * g * g
            m_hat = m_state[key] / (1.0 - beta1**step)
            v_hat = v_state[key] / (1.0 - beta2**step)
            arrays[key] -= step_size * m_hat / (np.sqrt(v_hat) + eps)

    final, _ = _batch_pass(model, examples, batches, duration_bins, False, beta, gamma)
    trace.append(final)
    if not np.isfinite(final.total):
        raise RuntimeError(f"non-finite loss after step {steps}: {final}")
    return model, trace


def save_loss_trace(path, trace: list[LossReport]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "total", "l_cbg", "l_reg", "l_cls", "l2"])
        for step, r in enumerate(trace):
            writer.writerow(
                [step, repr(r.total), repr(r.l_cbg), repr(r.l_reg), repr(r.l_cls), repr(r.l2)]
            )
