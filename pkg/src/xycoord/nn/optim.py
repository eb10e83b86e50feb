"""First-order optimizers updating ``Parameter.value`` in place."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Parameter


def _check_finite(params: list[Parameter]) -> None:
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")


def sgd_step(params: list[Parameter], lr: float) -> None:
    _check_finite(params)
    for p in params:
        p.value -= (lr * p.grad).astype(p.value.dtype)


def adam_step(params: list[Parameter], lr: float, beta1: float, beta2: float, eps: float, t: int,
              state: dict) -> None:
    """One Adam update at step ``t`` (1-based); ``state`` holds the moment buffers by name."""
    if t < 1:
        raise ValueError("adam step counter starts at 1")
    _check_finite(params)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        m, v = state.get(p.name) or (np.zeros_like(p.value), np.zeros_like(p.value))
        m *= beta1
        m += (1 - beta1) * p.grad
        v *= beta2
        v += (1 - beta2) * p.grad * p.grad
        state[p.name] = (m, v)
        p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.value.dtype)


class SGD:
    def __init__(self, params: list[Parameter], lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        sgd_step(self.params, self.lr)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.state: dict = {}

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t, self.state)


def make_optimizer(name: str, params: list[Parameter], lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}; expected 'adam' or 'sgd'")
