"""Central finite differences for checking reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-3) -> np.ndarray:
    """d f / d x by Richardson-extrapolated central differences in float64.

    Component i uses step h = rel_step * max(|x_i|, 0.1) and combines the
    h and h/2 central differences, (4 D(h/2) - D(h)) / 3, which cancels the
    O(h^2) truncation term. ``f`` is called on a float64 copy of ``x`` so
    the oracle does not inherit the rounding of a float32 forward pass.
    """
    x64 = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x64)
    flat, gflat = x64.reshape(-1), grad.reshape(-1)

    def central(i, h):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x64))
        flat[i] = orig - h
        fm = float(f(x64))
        flat[i] = orig
        return (fp - fm) / (2 * h)

    for i in range(flat.size):
        h = rel_step * max(abs(flat[i]), 0.1)
        gflat[i] = (4 * central(i, h / 2) - central(i, h)) / 3
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest componentwise |a - n| / max(|a|, |n|, floor * max|n|).

    The floor keeps components that cancel to ~0 from dominating through
    rounding noise; it is relative to the largest gradient entry.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(n).max(initial=0.0)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max(initial=0.0))
