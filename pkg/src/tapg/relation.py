"""Proposal feature sampling, dual self-attention and confidence maps.

Per proposal cell (j, i) the snippet features spanning [i, i + j] are
sampled at N interpolation points and contracted to a per-proposal vector.
Three branches score every valid cell: one attends over proposal positions,
one over channels, one reads the features directly; their per-cell
classification/regression sigmoids are averaged into the output maps.

Attention is quadratic in the number of valid cells, so configurations
meant for interactive use should keep D and T at or below 48. Reductions
over the position axis are accumulated in value order, which makes both
attention ops bit-exactly equivariant to permutations of their input rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import valid_cell_mask
from .kernels import (
    Conv1DParams,
    as_matrix,
    conv1d,
    conv1d_backward,
    init_conv,
    relu,
    sigmoid,
    softmax_rows,
    sorted_sum,
)

BRANCHES = ("pos", "chan", "plain")


@dataclass
class ProposalFeatureMap:
    """(D, T, C, N) sampled features; invalid proposals hold zeros."""

    values: np.ndarray
    valid_mask: np.ndarray


@dataclass
class ConfidenceMaps:
    """(D, T) classification (cc) and regression (cr) scores in (0, 1)."""

    cc: np.ndarray
    cr: np.ndarray
    valid_mask: np.ndarray


@dataclass
class PrbParams:
    reduce: Conv1DParams  # input channels -> sampling channels, k3
    samp_w: np.ndarray  # (reduced, sampling channels, N)
    samp_b: np.ndarray  # (reduced,)
    wa: np.ndarray  # position-attention transforms, (reduced, reduced)
    wb: np.ndarray
    wv: np.ndarray
    plain_w: np.ndarray  # (reduced, reduced)
    plain_b: np.ndarray
    head_w: dict[str, np.ndarray]  # branch -> (2, reduced)
    head_b: dict[str, np.ndarray]  # branch -> (2,)
    n_samples: int
    attention_enabled: bool = True
    extension_ratio: float = 0.0

    @property
    def in_channels(self) -> int:
        return self.reduce.in_channels

    @property
    def reduced_channels(self) -> int:
        return self.samp_w.shape[0]


def init_prb(
    in_channels: int,
    sample_channels: int,
    n_samples: int,
    reduced_channels: int,
    seed: int,
    attention_enabled: bool = True,
    extension_ratio: float = 0.0,
) -> PrbParams:
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(sample_channels * n_samples)
    samp_w = rng.uniform(-k, k, size=(reduced_channels, sample_channels, n_samples))
    samp_b = rng.uniform(-k, k, size=reduced_channels)
    kr = 1.0 / np.sqrt(reduced_channels)

    def square():
        return rng.uniform(-kr, kr, size=(reduced_channels, reduced_channels))

    return PrbParams(
        reduce=init_conv(in_channels, sample_channels, 3, rng),
        samp_w=samp_w,
        samp_b=samp_b,
        wa=square(),
        wb=square(),
        wv=square(),
        plain_w=square(),
        plain_b=rng.uniform(-kr, kr, size=reduced_channels),
        head_w={b: rng.uniform(-kr, kr, size=(2, reduced_channels)) for b in BRANCHES},
        head_b={b: rng.uniform(-kr, kr, size=2) for b in BRANCHES},
        n_samples=n_samples,
        attention_enabled=attention_enabled,
        extension_ratio=extension_ratio,
    )


@lru_cache(maxsize=8)
def sampling_weights(
    length: int, duration_bins: int, n_samples: int, extension_ratio: float = 0.0
) -> np.ndarray:
    """(T, D, T, N) interpolation weights for proposal feature sampling.

    Sample n of cell (j, i) reads fractional position i + j * n / (N - 1)
    (span endpoints inclusive; a zero-length span repeats position i).
    With a nonzero extension ratio the span stretches by ratio * j on each
    side and out-of-range positions simply contribute nothing. The result
    is cached and must be treated as read-only.
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    if duration_bins > length:
        raise ValueError(f"duration_bins {duration_bins} exceeds length {length}")
    j = np.arange(duration_bins, dtype=np.float64)[:, None, None]
    i = np.arange(length, dtype=np.float64)[None, :, None]
    frac_n = np.arange(n_samples, dtype=np.float64)[None, None, :] / (n_samples - 1)
    lo = i - extension_ratio * j
    span = (1.0 + 2.0 * extension_ratio) * j
    pos = lo + span * frac_n  # (D, T, N)

    base = np.floor(pos)
    frac = pos - base
    base = base.astype(np.int64)
    valid = valid_cell_mask(duration_bins, length)[:, :, None]

    weights = np.zeros((length, duration_bins, length, n_samples), dtype=np.float64)
    dd, ii, nn = np.meshgrid(
        np.arange(duration_bins), np.arange(length), np.arange(n_samples), indexing="ij"
    )
    lo_ok = valid & (base >= 0) & (base <= length - 1)
    np.add.at(
        weights,
        (base[lo_ok], dd[lo_ok], ii[lo_ok], nn[lo_ok]),
        1.0 - frac[lo_ok],
    )
    hi_ok = valid & (frac > 0) & (base + 1 >= 0) & (base + 1 <= length - 1)
    np.add.at(
        weights,
        (base[hi_ok] + 1, dd[hi_ok], ii[hi_ok], nn[hi_ok]),
        frac[hi_ok],
    )
    weights.setflags(write=False)
    return weights


def sample_proposal_features(
    base: np.ndarray, duration_bins: int, n_samples: int, extension_ratio: float = 0.0
) -> ProposalFeatureMap:
    """Sample N interpolated feature vectors per valid proposal cell."""
    base = as_matrix(base, "base features")
    weights = sampling_weights(
        base.shape[0], duration_bins, n_samples, extension_ratio
    )
    values = np.einsum("tc,tjin->jicn", base, weights)
    return ProposalFeatureMap(
        values=values, valid_mask=valid_cell_mask(duration_bins, base.shape[0])
    )


def reduce_features(fp: ProposalFeatureMap, params: PrbParams) -> np.ndarray:
    """Contract (channels x samples) per cell to the reduced width, ReLU'd.

    Masked cells stay exactly zero.
    """
    if fp.values.shape[2:] != params.samp_w.shape[1:]:
        raise ValueError(
            f"feature map trailing shape {fp.values.shape[2:]} does not match "
            f"weights {params.samp_w.shape[1:]}"
        )
    out = relu(np.einsum("jicn,ocn->jio", fp.values, params.samp_w) + params.samp_b)
    out[~fp.valid_mask] = 0.0
    return out


def position_attention_matrix(x: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    """(L, L) attention; row j holds the weights of all source positions."""
    a = x @ wa
    b = x @ wb
    return softmax_rows(b @ a.T)


def position_attention(
    x: np.ndarray, wa: np.ndarray, wb: np.ndarray, wv: np.ndarray
) -> np.ndarray:
    """Attend over proposal positions and add the result back onto x."""
    x = as_matrix(x, "proposal features")
    attn = position_attention_matrix(x, wa, wb)
    v = x @ wv
    attended = sorted_sum(attn[:, :, None] * v[None, :, :], axis=1)
    return x + attended


def channel_attention_matrix(x: np.ndarray) -> np.ndarray:
    """(C, C) attention from the channel gram matrix; rows sum to 1."""
    gram = sorted_sum(x[:, :, None] * x[:, None, :], axis=0)
    return softmax_rows(gram)


def channel_attention(x: np.ndarray) -> np.ndarray:
    """Attend over channels (no learned transforms) with a residual add."""
    x = as_matrix(x, "proposal features")
    attn = channel_attention_matrix(x)
    return x + x @ attn.T


def prb_forward_cached(params: PrbParams, base: np.ndarray, duration_bins: int):
    """Forward pass keeping intermediates for backprop."""
    base = as_matrix(base, "base features")
    cache: dict = {"base": base}

    z_reduce = conv1d(base, params.reduce)
    reduced = relu(z_reduce)
    cache["reduce"] = z_reduce

    weights = sampling_weights(
        base.shape[0], duration_bins, params.n_samples, params.extension_ratio
    )
    fp = np.einsum("tc,tjin->jicn", reduced, weights)
    mask = valid_cell_mask(duration_bins, base.shape[0])
    z_cells = np.einsum("jicn,ocn->jio", fp, params.samp_w) + params.samp_b
    cells = relu(z_cells)
    cells[~mask] = 0.0
    cache.update(weights=weights, fp=fp, mask=mask, z_cells=z_cells)

    x = cells[mask]  # (L, reduced) in row-major (j, i) order
    cache["x"] = x

    if params.attention_enabled:
        a = x @ params.wa
        b = x @ params.wb
        v = x @ params.wv
        attn = softmax_rows(b @ a.T)
        y_pos = x + sorted_sum(attn[:, :, None] * v[None, :, :], axis=1)
        cache["pos"] = (a, b, v, attn)

        chan_attn = channel_attention_matrix(x)
        y_chan = x + x @ chan_attn.T
        cache["chan"] = chan_attn
    else:
        y_pos = x
        y_chan = x

    z_plain = x @ params.plain_w + params.plain_b
    y_plain = relu(z_plain)
    cache["plain"] = z_plain

    branch_in = {"pos": y_pos, "chan": y_chan, "plain": y_plain}
    probs = {}
    for name in BRANCHES:
        logits = branch_in[name] @ params.head_w[name].T + params.head_b[name]
        probs[name] = sigmoid(logits)
    cache["branch_in"] = branch_in
    cache["probs"] = probs

    fused = sum(probs[name] for name in BRANCHES) / len(BRANCHES)
    cc = np.zeros_like(cells[:, :, 0])
    cr = np.zeros_like(cc)
    cc[mask] = fused[:, 0]
    cr[mask] = fused[:, 1]
    return ConfidenceMaps(cc=cc, cr=cr, valid_mask=mask), cache


def prb_forward(params: PrbParams, base: np.ndarray, duration_bins: int) -> ConfidenceMaps:
    """Score every valid proposal cell; masked cells are zero."""
    maps, _ = prb_forward_cached(params, base, duration_bins)
    return maps


def prb_backward(params: PrbParams, cache, d_cc: np.ndarray, d_cr: np.ndarray):
    """Backpropagate map gradients (zero on masked cells).

    Returns ({param_name: gradient}, gradient on the base features).
    """
    grads: dict[str, np.ndarray] = {}
    mask = cache["mask"]
    x = cache["x"]
    d_fused = np.stack([d_cc[mask], d_cr[mask]], axis=1) / len(BRANCHES)

    dx = np.zeros_like(x)
    d_branch = {}
    for name in BRANCHES:
        p = cache["probs"][name]
        d_logits = d_fused * p * (1.0 - p)
        grads[f"prb.head.{name}.w"] = d_logits.T @ cache["branch_in"][name]
        grads[f"prb.head.{name}.b"] = d_logits.sum(axis=0)
        d_branch[name] = d_logits @ params.head_w[name]

    # plain branch
    dz_plain = d_branch["plain"] * (cache["plain"] > 0)
    grads["prb.plain.w"] = x.T @ dz_plain
    grads["prb.plain.b"] = dz_plain.sum(axis=0)
    dx += dz_plain @ params.plain_w.T

    if params.attention_enabled:
        # position branch: y = x + attn @ (x wv)
        a, b, v, attn = cache["pos"]
        dy = d_branch["pos"]
        dx += dy
        d_attn = dy @ v.T
        dv = attn.T @ dy
        ds = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
        db = ds @ a
        da = ds.T @ b
        grads["prb.attn.wa"] = x.T @ da
        grads["prb.attn.wb"] = x.T @ db
        grads["prb.attn.wv"] = x.T @ dv
        dx += da @ params.wa.T + db @ params.wb.T + dv @ params.wv.T

        # channel branch: y = x + x @ attn_c.T with attn_c = softmax(x.T x)
        attn_c = cache["chan"]
        dy = d_branch["chan"]
        dx += dy + dy @ attn_c
        d_attn_c = dy.T @ x
        dg = attn_c * (d_attn_c - (d_attn_c * attn_c).sum(axis=1, keepdims=True))
        dx += x @ (dg + dg.T)
    else:
        grads["prb.attn.wa"] = np.zeros_like(params.wa)
        grads["prb.attn.wb"] = np.zeros_like(params.wb)
        grads["prb.attn.wv"] = np.zeros_like(params.wv)
        dx += d_branch["pos"] + d_branch["chan"]

    d_cells = np.zeros(mask.shape + (x.shape[1],), dtype=np.float64)
    d_cells[mask] = dx
    d_cells *= cache["z_cells"] > 0
    grads["prb.samp.w"] = np.einsum("jio,jicn->ocn", d_cells, cache["fp"])
    grads["prb.samp.b"] = d_cells.sum(axis=(0, 1))
    d_fp = np.einsum("jio,ocn->jicn", d_cells, params.samp_w)
    d_reduced = np.einsum("jicn,tjin->tc", d_fp, cache["weights"])

    dz_reduce = d_reduced * (cache["reduce"] > 0)
    d_base, grads["prb.reduce.w"], grads["prb.reduce.b"] = conv1d_backward(
        cache["base"], params.reduce, dz_reduce
    )
    return grads, d_base


def save_confidence_maps(path, video_id: str, maps: ConfidenceMaps) -> None:
    payload = {
        "video_id": video_id,
        "cc": maps.cc.tolist(),
        "cr": maps.cr.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_confidence_maps(path):
    with open(path) as f:
        raw = json.load(f)
    cc = np.asarray(raw["cc"], dtype=np.float64)
    cr = np.asarray(raw["cr"], dtype=np.float64)
    return raw["video_id"], ConfidenceMaps(
        cc=cc, cr=cr, valid_mask=valid_cell_mask(cc.shape[0], cc.shape[1])
    )
