"""Tensor conventions, parameters and the seeded random stream.

Tensors are plain ``numpy.ndarray`` values. Images are laid out as
channel x height x width, batches prepend a batch axis. float32 is the
working precision; float64 exists so gradient checks can use tight
tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PRECISIONS = {"f32": np.float32, "f64": np.float64}

# Fixed stream identifiers. A random stream is addressed by
# (seed, purpose, *indices) and seeded into a Philox4x64 counter-based
# generator through SeedSequence, so streams are platform-stable and
# independent of the order in which they are requested.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_SPLIT = 2
STREAM_NOISE = 3
STREAM_SAMPLE = 4
STREAM_TEST = 99


def resolve_dtype(precision: str | np.dtype | type) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}") from None
    dt = np.dtype(precision)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}")
    return dt


@dataclass(frozen=True)
class RngState:
    """Root seed from which all named random streams are derived."""

    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def stream(self, purpose: int, *indices: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.seed), int(purpose), *map(int, indices)])
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
