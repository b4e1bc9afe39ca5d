"""From-scratch 1D layer kernels: forward and backward passes.

Two surfaces live here.  The single-sample functions (conv_forward,
maxpool_forward, ...) operate on (channels, length) arrays and accumulate in
a fixed order (innermost kernel index fastest) so they are bit-equal to a
naive nested-loop evaluation.  The *_batch functions operate on
(batch, channels, length) arrays via im2col-style matmuls and are what the
training loop uses; they agree with the per-sample path to floating-point
roundoff, not bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS_PROB = 1e-12


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_channels, in_channels, kernel_size)
    bias: np.ndarray  # (out_channels,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 3 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("conv layer wants weights (out, in, k) and bias (out,)")
        if self.weights.shape[2] < 1:
            raise ShapeError("kernel_size must be at least 1")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("dense layer wants weights (out, in) and bias (out,)")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class PoolRecord:
    width: int
    stride: int
    argmax: np.ndarray  # (channels, out_length), indices into the input length axis
    input_length: int


def conv_output_length(length: int, kernel_size: int) -> int:
    return length - kernel_size + 1


def pool_output_length(length: int, width: int, stride: int) -> int:
    return (length - width) // stride + 1


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Valid cross-correlation, stride 1, on one (channels, length) sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.in_channels:
        raise ShapeError(f"expected ({layer.in_channels}, L) input, got {x.shape}")
    if x.shape[1] < layer.kernel_size:
        raise ShapeError("input shorter than the kernel")
    out_len = conv_output_length(x.shape[1], layer.kernel_size)
    # accumulate channel-major, kernel-index-minor: bit-equal to the naive
    # quadruple loop with the innermost index fastest
    out = np.repeat(layer.bias[:, None], out_len, axis=1)
    for c in range(layer.in_channels):
        for i in range(layer.kernel_size):
            out += layer.weights[:, c, i][:, None] * x[c, i : i + out_len][None, :]
    return out


def conv_backward(
    grad_out: np.ndarray, x: np.ndarray, layer: ConvLayer
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_weights, d_bias, d_input) of conv_forward."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out_len = conv_output_length(x.shape[1], layer.kernel_size)
    if grad_out.shape != (layer.out_channels, out_len):
        raise ShapeError(f"upstream gradient shape {grad_out.shape} does not match forward")
    d_w = np.zeros_like(layer.weights)
    d_x = np.zeros_like(x)
    for i in range(layer.kernel_size):
        x_slice = x[:, i : i + out_len]  # (in, out_len)
        d_w[:, :, i] = grad_out @ x_slice.T
        d_x[:, i : i + out_len] += layer.weights[:, :, i].T @ grad_out
    d_b = grad_out.sum(axis=1)
    return d_w, d_b, d_x


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.asarray(x, dtype=np.float64))


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != np.shape(x):
        raise ShapeError("gradient shape does not match cached input")
    return grad_out * (np.asarray(x) > 0)


def maxpool_forward(x: np.ndarray, width: int, stride: int) -> tuple[np.ndarray, PoolRecord]:
    """Per-channel max pooling; ties resolve to the first (lowest) index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("expected a (channels, length) input")
    if width < 1 or stride < 1:
        raise ShapeError("width and stride must be positive")
    if width > x.shape[1]:
        raise ShapeError("pool width exceeds input length")
    windows = sliding_window_view(x, width, axis=1)[:, ::stride, :]
    local = windows.argmax(axis=2)  # first occurrence on ties
    out = np.take_along_axis(windows, local[:, :, None], axis=2)[:, :, 0]
    argmax = local + np.arange(local.shape[1])[None, :] * stride
    return out, PoolRecord(width, stride, argmax, x.shape[1])


def maxpool_backward(grad_out: np.ndarray, record: PoolRecord) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != record.argmax.shape:
        raise ShapeError("gradient shape does not match pool record")
    channels = record.argmax.shape[0]
    d_x = np.zeros((channels, record.input_length))
    rows = np.repeat(np.arange(channels), record.argmax.shape[1])
    np.add.at(d_x, (rows, record.argmax.ravel()), grad_out.ravel())
    return d_x


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.in_dim,):
        raise ShapeError(f"expected a length-{layer.in_dim} vector, got {x.shape}")
    return layer.weights @ x + layer.bias


def dense_backward(
    grad_out: np.ndarray, x: np.ndarray, layer: DenseLayer
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (layer.out_dim,):
        raise ShapeError("upstream gradient shape does not match layer")
    d_w = np.outer(grad_out, x)
    d_b = grad_out.copy()
    d_x = layer.weights.T @ grad_out
    return d_w, d_b, d_x


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def bce_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clipped to [eps, 1-eps]."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError("predictions and labels must have the same length")
    if y_hat.size == 0:
        raise ShapeError("cannot compute a loss over zero samples")
    p = np.clip(y_hat, EPS_PROB, 1.0 - EPS_PROB)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def sigmoid_bce_backward(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of mean BCE at the sigmoid pre-activation: (y_hat - y) / m."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y_hat.size == 0:
        raise ShapeError("predictions and labels must share a nonzero length")
    return (y_hat - y) / y_hat.size


# ---------------------------------------------------------------------------
# Batched kernels (training path)
# ---------------------------------------------------------------------------


def conv_forward_batch(x: np.ndarray, layer: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    """Batched conv on (B, C, L); returns (output, im2col cache for backward)."""
    b, c, length = x.shape
    if c != layer.in_channels or length < layer.kernel_size:
        raise ShapeError("batched input incompatible with conv layer")
    out_len = conv_output_length(length, layer.kernel_size)
    cols = sliding_window_view(x, layer.kernel_size, axis=2)  # (B, C, T, K)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(b * out_len, -1)
    w_mat = layer.weights.reshape(layer.out_channels, -1)
    out = cols @ w_mat.T + layer.bias
    return out.reshape(b, out_len, layer.out_channels).transpose(0, 2, 1), cols


def conv_backward_batch(
    grad_out: np.ndarray, cols: np.ndarray, layer: ConvLayer, input_shape: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b, _, out_len = grad_out.shape
    g_mat = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(b * out_len, -1)
    d_w = (g_mat.T @ cols).reshape(layer.weights.shape)
    d_b = g_mat.sum(axis=0)
    d_cols = (g_mat @ layer.weights.reshape(layer.out_channels, -1)).reshape(
        b, out_len, layer.in_channels, layer.kernel_size
    )
    d_x = np.zeros(input_shape)
    for i in range(layer.kernel_size):
        d_x[:, :, i : i + out_len] += d_cols[:, :, :, i].transpose(0, 2, 1)
    return d_w, d_b, d_x


def maxpool_forward_batch(
    x: np.ndarray, width: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Batched max pool on (B, C, L); returns (output, argmax into length axis)."""
    if width > x.shape[2]:
        raise ShapeError("pool width exceeds input length")
    windows = sliding_window_view(x, width, axis=2)[:, :, ::stride, :]
    local = windows.argmax(axis=3)
    out = np.take_along_axis(windows, local[:, :, :, None], axis=3)[:, :, :, 0]
    argmax = local + np.arange(local.shape[2])[None, None, :] * stride
    return out, argmax


def maxpool_backward_batch(grad_out: np.ndarray, argmax: np.ndarray, input_length: int) -> np.ndarray:
    b, c, out_len = grad_out.shape
    d_x = np.zeros((b * c, input_length))
    rows = np.repeat(np.arange(b * c), out_len)
    np.add.at(d_x, (rows, argmax.ravel()), grad_out.ravel())
    return d_x.reshape(b, c, input_length)


def dense_forward_batch(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"expected (B, {layer.in_dim}) input, got {x.shape}")
    return x @ layer.weights.T + layer.bias


def dense_backward_batch(
    grad_out: np.ndarray, x: np.ndarray, layer: DenseLayer
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_w = grad_out.T @ x
    d_b = grad_out.sum(axis=0)
    d_x = grad_out @ layer.weights
    return d_w, d_b, d_x
