"""Boundary heatmap generator and boundary-map construction.

A two-layer convolutional base feeds a depth-2 nested U-shaped
encoder-decoder. Two supervision heads (one per decoder column) each emit
per-snippet starting/ending probabilities; their mean is the network
output. At inference the same weights also process the time-reversed
sequence, and the two passes are fused per position by a geometric mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import (
    Conv1DParams,
    conv1d,
    conv1d_backward,
    downsample_half_backward,
    downsample_half_with_argmax,
    init_conv,
    linear_resize,
    relu,
    resize_weight_matrix,
    sigmoid,
)
from .data import valid_cell_mask

# node ids of the depth-2 nested grid; (d, k) = (level, decoder column)
NODE_IDS = ("d0k0", "d1k0", "d2k0", "d0k1", "d1k1", "d0k2")


@dataclass
class UNode:
    """One grid node: convolution, per-channel affine, then ReLU.

    The affine stands in for batch normalization in this single-sample
    setting.
    """

    conv: Conv1DParams
    scale: np.ndarray
    shift: np.ndarray


@dataclass
class CbgParams:
    base1: Conv1DParams
    base2: Conv1DParams
    nodes: dict[str, UNode]
    head1: Conv1DParams  # reads d0k1
    head2: Conv1DParams  # reads d0k2

    @property
    def in_channels(self) -> int:
        return self.base1.in_channels


@dataclass
class BoundaryHeatmaps:
    """Per-snippet starting and ending probabilities in (0, 1)."""

    start: np.ndarray
    end: np.ndarray


@dataclass
class BoundaryMap:
    """(D, T) start/end pairing scores; cells with i + j >= T are masked."""

    values: np.ndarray
    valid_mask: np.ndarray


def init_cbg(
    in_channels: int, base_width: int, u_width: int, seed: int
) -> CbgParams:
    """Deterministic parameter initialization from a seed."""
    rng = np.random.default_rng(seed)
    node_in = {
        "d0k0": base_width,
        "d1k0": u_width,
        "d2k0": u_width,
        "d0k1": 2 * u_width,
        "d1k1": 2 * u_width,
        "d0k2": 3 * u_width,
    }
    nodes = {
        name: UNode(
            conv=init_conv(node_in[name], u_width, 3, rng),
            scale=np.ones(u_width),
            shift=np.zeros(u_width),
        )
        for name in NODE_IDS
    }
    return CbgParams(
        base1=init_conv(in_channels, base_width, 3, rng),
        base2=init_conv(base_width, base_width, 3, rng),
        nodes=nodes,
        head1=init_conv(u_width, 2, 1, rng),
        head2=init_conv(u_width, 2, 1, rng),
    )


def base_forward(params: CbgParams, window: np.ndarray) -> np.ndarray:
    """The shared two-convolution stem; its output also feeds the
    proposal-confidence branch."""
    return relu(conv1d(relu(conv1d(window, params.base1)), params.base2))


def _node_forward(node: UNode, x: np.ndarray):
    z = conv1d(x, node.conv)
    a = z * node.scale + node.shift
    return relu(a), (x, z, a)


def _head_forward(head: Conv1DParams, x: np.ndarray):
    probs = sigmoid(conv1d(x, head))
    return BoundaryHeatmaps(start=probs[:, 0], end=probs[:, 1]), probs


def cbg_forward_cached(params: CbgParams, window: np.ndarray):
    """Forward pass keeping every intermediate needed for backprop."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != params.in_channels:
        raise ValueError(
            f"window shape {window.shape} does not match "
            f"{params.in_channels} input channels"
        )
    cache: dict = {"window": window}

    z1 = conv1d(window, params.base1)
    b1 = relu(z1)
    z2 = conv1d(b1, params.base2)
    b2 = relu(z2)
    cache["base"] = (z1, b1, z2, b2)

    x00, cache["d0k0"] = _node_forward(params.nodes["d0k0"], b2)
    p0, src0 = downsample_half_with_argmax(x00)
    x10, cache["d1k0"] = _node_forward(params.nodes["d1k0"], p0)
    p1, src1 = downsample_half_with_argmax(x10)
    x20, cache["d2k0"] = _node_forward(params.nodes["d2k0"], p1)
    cache["pool"] = (src0, x00.shape[0], src1, x10.shape[0])

    up10 = linear_resize(x10, x00.shape[0])
    x01, cache["d0k1"] = _node_forward(
        params.nodes["d0k1"], np.hstack([x00, up10])
    )
    up20 = linear_resize(x20, x10.shape[0])
    x11, cache["d1k1"] = _node_forward(
        params.nodes["d1k1"], np.hstack([x10, up20])
    )
    up11 = linear_resize(x11, x00.shape[0])
    x02, cache["d0k2"] = _node_forward(
        params.nodes["d0k2"], np.hstack([x00, x01, up11])
    )
    cache["lengths"] = (x00.shape[0], x10.shape[0], x20.shape[0])

    head1, probs1 = _head_forward(params.head1, x01)
    head2, probs2 = _head_forward(params.head2, x02)
    cache["heads"] = (x01, probs1, x02, probs2)

    final = BoundaryHeatmaps(
        start=0.5 * (head1.start + head2.start),
        end=0.5 * (head1.end + head2.end),
    )
    return [head1, head2], final, cache


def cbg_forward(params: CbgParams, window: np.ndarray):
    """Run the generator on one window.

    Returns (supervision heads, final heatmaps); the final heatmaps are
    the elementwise mean of the two heads.
    """
    heads, final, _ = cbg_forward_cached(params, window)
    return heads, final


def _node_backward(node: UNode, cache, grad_y):
    x, z, a = cache
    grad_a = grad_y * (a > 0)
    grad_scale = (grad_a * z).sum(axis=0)
    grad_shift = grad_a.sum(axis=0)
    grad_z = grad_a * node.scale
    grad_x, grad_w, grad_b = conv1d_backward(x, node.conv, grad_z)
    return grad_x, {"w": grad_w, "b": grad_b, "scale": grad_scale, "shift": grad_shift}


def cbg_backward(params: CbgParams, cache, grad_heads, grad_base_extra=None):
    """Backpropagate per-head probability gradients through the generator.

    grad_heads is [(d_start, d_end), (d_start, d_end)] aligned with the
    two supervision heads. grad_base_extra, if given, is an extra gradient
    on the base-stem output (the confidence branch taps it).

    Returns {param_name: gradient} with names matching model.param_items.
    """
    grads: dict[str, np.ndarray] = {}
    x01_in, probs1, x02_in, probs2 = cache["heads"]

    def head_back(head, x_in, probs, d_probs):
        grad_logits = d_probs * probs * (1.0 - probs)
        grad_x, grad_w, grad_b = conv1d_backward(x_in, head, grad_logits)
        return grad_x, grad_w, grad_b

    d_probs1 = np.stack(grad_heads[0], axis=1)
    d_probs2 = np.stack(grad_heads[1], axis=1)
    dx01, grads["cbg.head1.w"], grads["cbg.head1.b"] = head_back(
        params.head1, x01_in, probs1, d_probs1
    )
    dx02, grads["cbg.head2.w"], grads["cbg.head2.b"] = head_back(
        params.head2, x02_in, probs2, d_probs2
    )

    len0, len1, len2 = cache["lengths"]
    u = params.head1.in_channels
    src0, pooled_from0, src1, pooled_from1 = cache["pool"]

    def store(name, node_grads):
        for key, val in node_grads.items():
            grads[f"cbg.{name}.{key}"] = val

    # reverse topological order over the node grid
    dcat, g = _node_backward(params.nodes["d0k2"], cache["d0k2"], dx02)
    store("d0k2", g)
    dx00 = dcat[:, :u].copy()
    dx01 += dcat[:, u : 2 * u]
    dx11 = resize_weight_matrix(len1, len0).T @ dcat[:, 2 * u :]

    dcat, g = _node_backward(params.nodes["d0k1"], cache["d0k1"], dx01)
    store("d0k1", g)
    dx00 += dcat[:, :u]
    dx10 = resize_weight_matrix(len1, len0).T @ dcat[:, u:]

    dcat, g = _node_backward(params.nodes["d1k1"], cache["d1k1"], dx11)
    store("d1k1", g)
    dx10 += dcat[:, :u]
    dx20 = resize_weight_matrix(len2, len1).T @ dcat[:, u:]

    dp1, g = _node_backward(params.nodes["d2k0"], cache["d2k0"], dx20)
    store("d2k0", g)
    dx10 += downsample_half_backward(src1, dp1, pooled_from1)

    dp0, g = _node_backward(params.nodes["d1k0"], cache["d1k0"], dx10)
    store("d1k0", g)
    dx00 += downsample_half_backward(src0, dp0, pooled_from0)

    db2, g = _node_backward(params.nodes["d0k0"], cache["d0k0"], dx00)
    store("d0k0", g)

    if grad_base_extra is not None:
        db2 = db2 + grad_base_extra
    z1, b1, z2, b2 = cache["base"]
    dz2 = db2 * (z2 > 0)
    db1, grads["cbg.base2.w"], grads["cbg.base2.b"] = conv1d_backward(
        b1, params.base2, dz2
    )
    dz1 = db1 * (z1 > 0)
    _, grads["cbg.base1.w"], grads["cbg.base1.b"] = conv1d_backward(
        cache["window"], params.base1, dz1
    )
    return grads


def fuse_heatmaps(forward: BoundaryHeatmaps, backward: BoundaryHeatmaps) -> BoundaryHeatmaps:
    """Per-position geometric mean of two heatmap pairs."""
    return BoundaryHeatmaps(
        start=np.sqrt(forward.start * backward.start),
        end=np.sqrt(forward.end * backward.end),
    )


def bidirectional_infer(params: CbgParams, window: np.ndarray) -> BoundaryHeatmaps:
    """Fuse a forward pass with a pass over the time-reversed window.

    A start detected in reversed time is an end in forward time, so the
    reversed pass's start/end outputs swap roles before the per-position
    geometric-mean fusion. Both passes share the same weights.
    """
    _, fwd = cbg_forward(params, window)
    _, rev = cbg_forward(params, np.asarray(window, dtype=np.float64)[::-1])
    backward = BoundaryHeatmaps(start=rev.end[::-1], end=rev.start[::-1])
    return fuse_heatmaps(fwd, backward)


def build_boundary_map(h: BoundaryHeatmaps, duration_bins: int) -> BoundaryMap:
    """Pair every start snippet i with end snippet i + j.

    Valid cell (j, i) holds start[i] * end[i + j]; cells reaching past the
    window are zero and masked.
    """
    if duration_bins < 1:
        raise ValueError(f"duration_bins must be >= 1, got {duration_bins}")
    length = h.start.shape[0]
    if duration_bins > length:
        raise ValueError(
            f"duration_bins {duration_bins} exceeds window length {length}"
        )
    values = np.zeros((duration_bins, length), dtype=np.float64)
    for j in range(duration_bins):
        n = length - j
        values[j, :n] = h.start[:n] * h.end[j:]
    return BoundaryMap(values=values, valid_mask=valid_cell_mask(duration_bins, length))


def save_heatmaps(path, video_id: str, window_start: float, h: BoundaryHeatmaps) -> None:
    payload = {
        "video_id": video_id,
        "window_start": window_start,
        "start": h.start.tolist(),
        "end": h.end.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_heatmaps(path):
    with open(path) as f:
        raw = json.load(f)
    h = BoundaryHeatmaps(
        start=np.asarray(raw["start"], dtype=np.float64),
        end=np.asarray(raw["end"], dtype=np.float64),
    )
    return raw["video_id"], float(raw["window_start"]), h
