"""Dense numeric primitives for 1D sequence models.

Everything here runs on plain float64 numpy arrays laid out as
(length, channels); no ML framework is involved. The network modules
build their forward and backward passes out of these kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMOID_EPS = 1e-12


def as_matrix(values, name: str = "input") -> np.ndarray:
    """Validate and return a 2D float64 array with finite entries."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass
class Conv1DParams:
    """Weights of a same-length 1D convolution.

    weights has shape (out_channels, in_channels, kernel_size) and
    kernel_size must be odd so zero padding keeps the sequence length.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        expected = (self.out_channels, self.in_channels, self.kernel_size)
        if self.weights.shape != expected:
            raise ValueError(
                f"weights shape {self.weights.shape} does not match {expected}"
            )
        if self.bias.shape != (self.out_channels,):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match ({self.out_channels},)"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("convolution parameters contain non-finite values")


def init_conv(
    in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator
) -> Conv1DParams:
    """Uniform(-k, k) init with k = 1/sqrt(fan_in)."""
    k = 1.0 / np.sqrt(in_channels * kernel_size)
    w = rng.uniform(-k, k, size=(out_channels, in_channels, kernel_size))
    b = rng.uniform(-k, k, size=out_channels)
    return Conv1DParams(in_channels, out_channels, kernel_size, w, b)


def _padded_windows(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """All kernel-sized windows of the zero-padded input, shape (l, cin, k)."""
    length, cin = x.shape
    pad = kernel_size // 2
    padded = np.zeros((length + 2 * pad, cin), dtype=np.float64)
    padded[pad : pad + length] = x
    return np.lib.stride_tricks.sliding_window_view(padded, kernel_size, axis=0)


def conv1d(x, params: Conv1DParams) -> np.ndarray:
    """Same-length 1D convolution with zero padding.

    Args:
        x: (length, in_channels) input sequence.
        params: convolution weights and bias.

    Returns:
        (length, out_channels) array; each value is the padded sliding
        dot product plus bias.
    """
    x = as_matrix(x)
    if x.shape[1] != params.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, expected {params.in_channels}"
        )
    windows = _padded_windows(x, params.kernel_size)
    return np.einsum("tik,oik->to", windows, params.weights) + params.bias


def conv1d_backward(x, params: Conv1DParams, grad_out):
    """Gradients of conv1d w.r.t. input, weights and bias.

    Returns (grad_x, grad_weights, grad_bias) for an upstream gradient
    of shape (length, out_channels).
    """
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    length = x.shape[0]
    k = params.kernel_size
    pad = k // 2

    windows = _padded_windows(x, k)
    grad_w = np.einsum("to,tik->oik", grad_out, windows)
    grad_b = grad_out.sum(axis=0)

    # scatter-add per tap position into the padded input gradient
    contrib = np.einsum("to,oik->tik", grad_out, params.weights)
    grad_padded = np.zeros((length + 2 * pad, params.in_channels), dtype=np.float64)
    for tap in range(k):
        grad_padded[tap : tap + length] += contrib[:, :, tap]
    return grad_padded[pad : pad + length], grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic, clipped into the open unit interval."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def sorted_sum(values: np.ndarray, axis: int) -> np.ndarray:
    """Sum along an axis in ascending value order.

    The accumulation order then depends only on the multiset of values,
    so results are bit-identical under any permutation along that axis.
    """
    return np.ascontiguousarray(np.sort(values, axis=axis)).sum(axis=axis)


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    The normalizing sum is accumulated in value order, so each row's
    result does not depend on the ordering of its columns.
    """
    a = as_matrix(logits, "logits")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / sorted_sum(e, axis=1)[:, None]


def linear_resize(seq, target_len: int) -> np.ndarray:
    """Resample a (l, C) sequence to target_len rows by linear interpolation.

    Output t reads position t*(l-1)/(target_len-1); positions landing on
    an input row are copied verbatim, so identity and constant inputs are
    reproduced exactly. target_len == 1 takes the midpoint sample.
    """
    x = as_matrix(seq, "sequence")
    length = x.shape[0]
    if length < 1:
        raise ValueError("cannot resize an empty sequence")
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")

    if target_len == 1:
        num = np.array([length - 1], dtype=np.int64)
        den = 2
    else:
        num = np.arange(target_len, dtype=np.int64) * (length - 1)
        den = target_len - 1

    idx = num // den
    rem = num % den
    out = x[idx].copy()
    interp = rem != 0
    if np.any(interp):
        f = (rem[interp] / den)[:, None]
        lo = x[idx[interp]]
        hi = x[idx[interp] + 1]
        out[interp] = lo + f * (hi - lo)
    return out


def resize_weight_matrix(length: int, target_len: int) -> np.ndarray:
    """(target_len, length) matrix W with linear_resize(x) == W @ x.

    Used for backpropagation through resizing; the forward path keeps the
    sample-exact formulation above.
    """
    if target_len == 1:
        num = np.array([length - 1], dtype=np.int64)
        den = 2
    else:
        num = np.arange(target_len, dtype=np.int64) * (length - 1)
        den = target_len - 1
    idx = num // den
    f = (num % den) / den
    w = np.zeros((target_len, length), dtype=np.float64)
    rows = np.arange(target_len)
    w[rows, idx] = 1.0 - f
    nz = f != 0
    w[rows[nz], idx[nz] + 1] = f[nz]
    return w


def downsample_half(seq) -> np.ndarray:
    """Max-pool width 2 over non-overlapping pairs; odd tails keep the last row."""
    out, _ = downsample_half_with_argmax(seq)
    return out


def downsample_half_with_argmax(seq):
    """Max-pool as above, also returning source row indices for backprop."""
    x = as_matrix(seq, "sequence")
    length, channels = x.shape
    if length < 2:
        raise ValueError(f"downsample needs length >= 2, got {length}")
    n_pairs = length // 2
    pairs = x[: 2 * n_pairs].reshape(n_pairs, 2, channels)
    # ties pick the first element of the pair (argmax convention)
    choice = pairs.argmax(axis=1)
    out = pairs.max(axis=1)
    src = 2 * np.arange(n_pairs)[:, None] + choice
    if length % 2:
        out = np.vstack([out, x[-1:]])
        src = np.vstack([src, np.full((1, channels), length - 1)])
    return out, src


def downsample_half_backward(src: np.ndarray, grad_out: np.ndarray, length: int):
    """Route pooled gradients back to the argmax rows."""
    grad = np.zeros((length, grad_out.shape[1]), dtype=np.float64)
    cols = np.arange(grad_out.shape[1])
    np.add.at(grad, (src, cols[None, :]), grad_out)
    return grad


def upsample_double(seq) -> np.ndarray:
    """Linear resize to twice the input length."""
    x = as_matrix(seq, "sequence")
    return linear_resize(x, 2 * x.shape[0])
