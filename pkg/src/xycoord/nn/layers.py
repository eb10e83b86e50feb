"""Stateful layers wrapping the functional kernels.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` in ``backward``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .functional import ConvSpec
from .tensor import Parameter


class Layer:
    name = "layer"

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape of one sample's output (no batch axis)."""
        return input_shape

    def __call__(self, x):
        return self.forward(x)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Layer):
    def __init__(self, name: str, spec: ConvSpec, dtype=np.float32, rng: np.random.Generator | None = None,
                 input_grad: bool = True):
        self.name = name
        self.spec = spec
        # the first layer of a network has no use for d(loss)/d(input)
        self.input_grad = input_grad
        shape = spec.weight_shape
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = he_normal(rng, shape, spec.in_channels * spec.kernel ** 2, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype))
        self._cols = None
        self._x_shape = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected [N,C,H,W] input, got {x.shape}")
        y, self._cols = F.conv2d_forward_cols(x, self.spec, self.weight.value, self.bias.value)
        self._x_shape = x.shape
        return y

    def backward(self, dy):
        dx, dw, db = F.conv2d_backward_cols(dy, self._cols, self._x_shape, self.spec, self.weight.value,
                                            self.input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.spec.in_channels:
            raise ShapeError(f"{self.name}: expects {self.spec.in_channels} input channels, got {c}")
        ho, wo = self.spec.output_extent(h), self.spec.output_extent(w)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: {h}x{w} input gives empty {ho}x{wo} output")
        return (self.spec.out_channels, ho, wo)


class ConvTranspose2d(Layer):
    """Upsampling layer; ``spec`` is the convolution it inverts shape-wise."""

    def __init__(self, name: str, spec: ConvSpec, dtype=np.float32, rng: np.random.Generator | None = None):
        self.name = name
        self.spec = spec
        shape = spec.weight_shape
        fan_in = spec.out_channels * spec.kernel ** 2
        w = np.zeros(shape, dtype=dtype) if rng is None else he_normal(rng, shape, fan_in, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.in_channels, dtype=dtype))
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def _size(self, h, w):
        s, k, p = self.spec.stride, self.spec.kernel, self.spec.padding
        return (h - 1) * s + k - 2 * p, (w - 1) * s + k - 2 * p

    def forward(self, x):
        self._x = x
        return F.conv_transpose2d_forward(x, self.spec, self.weight.value, self.bias.value,
                                          self._size(x.shape[2], x.shape[3]))

    def backward(self, dy):
        dx, dw, db = F.conv_transpose2d_backward(dy, self._x, self.spec, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.spec.out_channels:
            raise ShapeError(f"{self.name}: expects {self.spec.out_channels} input channels, got {c}")
        return (self.spec.in_channels, *self._size(h, w))


class MaxPool2d(Layer):
    def __init__(self, name: str, window: int = 2):
        self.name = name
        self.window = window
        self._argmax = None
        self._x_shape = None

    def forward(self, x):
        y, self._argmax = F.maxpool2d(x, self.window, self.window)
        self._x_shape = x.shape
        return y

    def backward(self, dy):
        return F.maxpool2d_backward(dy, self._argmax, self._x_shape, self.window)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if h < self.window or w < self.window:
            raise ShapeError(f"{self.name}: {h}x{w} input is smaller than the pooling window")
        return (c, h // self.window, w // self.window)


class Dense(Layer):
    def __init__(self, name: str, d_in: int, d_out: int, dtype=np.float32, rng: np.random.Generator | None = None):
        self.name = name
        w = np.zeros((d_in, d_out), dtype=dtype) if rng is None else he_normal(rng, (d_in, d_out), d_in, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(d_out, dtype=dtype))
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = x
        return F.dense_forward(x, self.weight.value, self.bias.value)

    def backward(self, dy):
        dx, dw, db = F.dense_backward(dy, self._x, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def output_shape(self, input_shape):
        if input_shape != (self.weight.shape[0],):
            raise ShapeError(f"{self.name}: expects {self.weight.shape[0]} features, got {input_shape}")
        return (self.weight.shape[1],)


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._x = None

    def forward(self, x):
        self._x = x
        return F.relu(x)

    def backward(self, dy):
        return F.relu_backward(dy, self._x)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Reshape(Layer):
    def __init__(self, name: str, shape: tuple[int, ...]):
        self.name = name
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, dy):
        return dy.reshape(dy.shape[0], -1)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"{self.name}: cannot reshape {input_shape} to {self.shape}")
        return self.shape


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = "sequential"):
        self.name = name
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for layer in self.layers:
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {layer.name!r} rejects input {shape}: {exc}") from None
        return shape

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"unknown layer {name!r}; available: {[l.name for l in self.layers]}")
