"""Forward and backward kernels for the layer types used by the models.

Every differentiable op comes as a ``*_forward`` / ``*_backward`` pair of
pure functions over numpy arrays. Convolutions are cross-correlations
(no kernel flip) summed over all input channels, computed by extracting
sliding windows and contracting them with the kernel bank in one GEMM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"ConvSpec.{name} must be positive, got {getattr(self, name)}")
        if self.padding < 0:
            raise ShapeError(f"ConvSpec.padding must be non-negative, got {self.padding}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def output_extent(self, extent: int) -> int:
        return (extent + 2 * self.padding - self.kernel) // self.stride + 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a [C,H,W] or [N,C,H,W] tensor, got shape {x.shape}")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _check_conv(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray | None) -> tuple[int, int]:
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weights have shape {weights.shape}, spec expects {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d bias has shape {bias.shape}, expected ({spec.out_channels},)")
    ho, wo = spec.output_extent(x.shape[2]), spec.output_extent(x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d input {x.shape[2]}x{x.shape[3]} is too small for kernel {spec.kernel}, "
            f"stride {spec.stride}, padding {spec.padding} (output would be {ho}x{wo})"
        )
    return ho, wo


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """[N,C,H,W] -> [C*k*k, N*Ho*Wo] patch matrix (copy), channel-major rows."""
    k, s = spec.kernel, spec.stride
    xt = _pad(x, spec.padding).transpose(1, 0, 2, 3)
    win = sliding_window_view(xt, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    c, n, ho, wo = win.shape[:4]
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(c * k * k, n * ho * wo)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns back into an [N,C,H,W] image."""
    n, c, h, w = x_shape
    k, s, p = spec.kernel, spec.stride, spec.padding
    ho, wo = spec.output_extent(h), spec.output_extent(w)
    patches = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * ho:s, j:j + s * wo:s] += patches[:, i, j]
    if p:
        out = out[:, :, p:p + h, p:p + w]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _from_channel_major(y: np.ndarray, n: int, ho: int, wo: int) -> np.ndarray:
    return np.ascontiguousarray(y.reshape(-1, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_forward_cols(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray):
    """Batched forward that also returns the patch matrix for reuse in backward."""
    ho, wo = _check_conv(x, spec, weights, bias)
    cols = im2col(x, spec)
    y = weights.reshape(spec.out_channels, -1) @ cols
    y += bias[:, None]
    return _from_channel_major(y, x.shape[0], ho, wo), cols


def conv2d_forward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    xb, squeeze = _as_batch(x)
    y, _ = conv2d_forward_cols(xb, spec, weights, bias)
    return y[0] if squeeze else y


def conv2d_backward_cols(dy: np.ndarray, cols: np.ndarray, x_shape, spec: ConvSpec, weights: np.ndarray,
                         need_input_grad: bool = True):
    """Backward pass reusing the forward patch matrix; ``dx`` is None when not requested."""
    o = spec.out_channels
    dy2 = dy.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (dy2 @ cols.T).reshape(weights.shape)
    db = dy2.sum(axis=1)
    dx = col2im(weights.reshape(o, -1).T @ dy2, x_shape, spec) if need_input_grad else None
    return dx, dw, db


def conv2d_backward(dy: np.ndarray, saved_input: np.ndarray, spec: ConvSpec, weights: np.ndarray):
    """Gradients of a conv2d output w.r.t. input, weights and bias."""
    xb, squeeze = _as_batch(saved_input)
    ho, wo = _check_conv(xb, spec, weights, None)
    dyb = dy[None] if squeeze and dy.ndim == 3 else dy
    expected = (xb.shape[0], spec.out_channels, ho, wo)
    if dyb.shape != expected:
        raise ShapeError(f"conv2d upstream gradient has shape {dy.shape}, forward output was {expected}")
    dx, dw, db = conv2d_backward_cols(dyb, im2col(xb, spec), xb.shape, spec, weights)
    return (dx[0] if squeeze else dx), dw, db


def conv_transpose2d_forward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray,
                             output_size: tuple[int, int]) -> np.ndarray:
    """Transposed convolution (adjoint of conv2d w.r.t. its input).

    ``spec`` describes the *forward* convolution mapping the output image
    (``spec.in_channels`` channels, ``output_size``) to ``x``
    (``spec.out_channels`` channels); ``weights`` has ``spec.weight_shape``.
    """
    n, c, h, w = x.shape
    if c != spec.out_channels or weights.shape != spec.weight_shape:
        raise ShapeError(f"conv_transpose2d: input {x.shape} / weights {weights.shape} do not match {spec}")
    oh, ow = output_size
    if (spec.output_extent(oh), spec.output_extent(ow)) != (h, w):
        raise ShapeError(f"conv_transpose2d: output size {output_size} does not map back to {h}x{w}")
    x2 = x.transpose(1, 0, 2, 3).reshape(c, -1)
    out = col2im(weights.reshape(c, -1).T @ x2, (n, spec.in_channels, oh, ow), spec)
    return out + bias.reshape(1, -1, 1, 1)


def conv_transpose2d_backward(dy: np.ndarray, saved_input: np.ndarray, spec: ConvSpec, weights: np.ndarray):
    c = spec.out_channels
    n, _, h, w = saved_input.shape
    cols = im2col(dy, spec)
    dx = _from_channel_major(weights.reshape(c, -1) @ cols, n, h, w)
    x2 = saved_input.transpose(1, 0, 2, 3).reshape(c, -1)
    dw = (x2 @ cols.T).reshape(weights.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling.

    Trailing rows/columns that do not fill a window are dropped. Returns
    the pooled tensor and, per output element, the row-major index of the
    winning element inside its window (first maximum wins on ties).
    """
    if window != stride:
        raise ShapeError("only non-overlapping pooling (window == stride) is supported")
    xb, squeeze = _as_batch(x)
    h, w = xb.shape[2:]
    ho, wo = h // window, w // window
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool2d input {h}x{w} is smaller than the {window}x{window} window")
    taps = [xb[:, :, i:ho * window:window, j:wo * window:window] for i in range(window) for j in range(window)]
    out = taps[0].copy()
    for t in taps[1:]:
        np.maximum(out, t, out=out)
    idx = np.full(out.shape, window * window - 1, dtype=np.int8)
    for q in range(window * window - 2, -1, -1):
        idx[taps[q] == out] = q
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool2d_backward(dy: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, ...],
                       window: int = 2) -> np.ndarray:
    squeeze = len(input_shape) == 3
    if squeeze:
        dy, argmax, input_shape = dy[None], argmax[None], (1, *input_shape)
    if dy.shape != argmax.shape:
        raise ShapeError(f"maxpool2d upstream gradient {dy.shape} does not match pooled shape {argmax.shape}")
    ho, wo = dy.shape[2], dy.shape[3]
    dx = np.zeros(input_shape, dtype=dy.dtype)
    for i in range(window):
        for j in range(window):
            dx[:, :, i:ho * window:window, j:wo * window:window] = np.where(argmax == i * window + j, dy, 0)
    return dx[0] if squeeze else dx


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match {weights.shape[1]} outputs")
    return x @ weights + bias


def dense_backward(dy: np.ndarray, saved_input: np.ndarray, weights: np.ndarray):
    if dy.shape != (saved_input.shape[0], weights.shape[1]):
        raise ShapeError(f"dense: upstream gradient {dy.shape} does not match output "
                         f"({saved_input.shape[0]}, {weights.shape[1]})")
    return dy @ weights.T, saved_input.T @ dy, dy.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    return dy * (saved_input > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError(f"softmax expects [N, M] logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dp: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return probs * (dp - (dp * probs).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n: int, m: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"labels must lie in [0, {m}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.intp)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood with probabilities clamped at 1e-7."""
    n, m = probs.shape
    labels = _check_labels(labels, n, m)
    picked = np.clip(probs[np.arange(n), labels], PROB_EPS, 1.0)
    return float(-np.log(picked).mean())


def cross_entropy_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n, m = probs.shape
    labels = _check_labels(labels, n, m)
    rows = np.arange(n)
    picked = probs[rows, labels]
    dp = np.zeros_like(probs)
    dp[rows, labels] = np.where(picked > PROB_EPS, -1.0 / (n * np.maximum(picked, PROB_EPS)), 0.0)
    return dp


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Fused loss: returns (mean loss, probabilities, d loss / d logits)."""
    probs = softmax(logits)
    n, m = probs.shape
    labels = _check_labels(labels, n, m)
    loss = cross_entropy(probs, labels)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, probs, grad / n


def steps_to_global(n: int, s: int, k: int) -> int:
    """Convolution steps needed to cover an n-pixel image globally, floor((n - s) / k).

    The count is evaluated exactly as stated for the coordinate-channel
    argument; it is not the usual receptive-field recurrence.
    """
    for name, v in (("n", n), ("s", s), ("k", k)):
        if int(v) != v:
            raise ValueError(f"{name} must be an integer, got {v!r}")
    if s < 1 or k < 1:
        raise ValueError(f"stride and kernel must be >= 1 (s={s}, k={k})")
    if n <= s:
        raise ValueError(f"image dimension must exceed the stride (n={n}, s={s})")
    return (int(n) - int(s)) // int(k)
