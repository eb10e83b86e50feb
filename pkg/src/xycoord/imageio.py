"""8-bit grayscale PNG export for feature maps and VAE artifacts."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError


def normalize(arr: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant array maps to zeros."""
    a = np.asarray(arr, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if not hi > lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def to_uint8(unit: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: str | Path, arr: np.ndarray, rescale: bool = True) -> Path:
    """Write a 2-D array as grayscale PNG; values are min-max normalized unless ``rescale`` is off."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ShapeError(f"grayscale export needs a 2-D array, got {a.shape}")
    unit = normalize(a) if rescale else np.asarray(a, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(unit), mode="L").save(path, format="PNG")
    return path


def read_png(path: str | Path) -> np.ndarray:
    """Grayscale PNG as float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
