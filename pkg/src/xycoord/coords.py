"""Normalized XY position channels and their attachment to grayscale images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class CoordinateGrid:
    height: int
    width: int
    x_channel: np.ndarray  # [H, W], column position in [0, 1]
    y_channel: np.ndarray  # [H, W], row position in [0, 1]

    def stacked(self) -> np.ndarray:
        return np.stack([self.x_channel, self.y_channel])


def _ramp(n: int, dtype) -> np.ndarray:
    # extent 1 has no span to normalize over; pin it at the lower endpoint
    if n == 1:
        return np.zeros(1, dtype=dtype)
    return (np.arange(n, dtype=np.float64) / (n - 1)).astype(dtype)


def make_position_grids(height: int, width: int, dtype=np.float32) -> CoordinateGrid:
    """x[i, j] = j / (W - 1) and y[i, j] = i / (H - 1), so both endpoints are hit exactly."""
    if int(height) < 1 or int(width) < 1:
        raise ShapeError(f"grid extents must be positive, got {height}x{width}")
    height, width = int(height), int(width)
    xs, ys = _ramp(width, dtype), _ramp(height, dtype)
    x = np.broadcast_to(xs, (height, width)).copy()
    y = np.broadcast_to(ys[:, None], (height, width)).copy()
    x.flags.writeable = False
    y.flags.writeable = False
    return CoordinateGrid(height, width, x, y)


def grids_for_resolution(height: int, width: int, dtype=np.float32) -> CoordinateGrid:
    """Grid for an image at a new resolution.

    Regenerating is equivalent to bilinearly resizing a reference grid
    (align-corners), since the grid is affine in its indices.
    """
    return make_position_grids(height, width, dtype)


def append_coords(image: np.ndarray) -> np.ndarray:
    """[1,H,W] -> [3,H,W] (or [N,1,H,W] -> [N,3,H,W]): image, x grid, y grid."""
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise ShapeError(f"append_coords takes grayscale [1,H,W] images, got {image.shape[0]} channels")
        grid = make_position_grids(image.shape[1], image.shape[2], image.dtype)
        return np.concatenate([image, grid.stacked()], axis=0)
    if image.ndim == 4:
        if image.shape[1] != 1:
            raise ShapeError(f"append_coords takes grayscale [N,1,H,W] batches, got {image.shape[1]} channels")
        n, _, h, w = image.shape
        grid = np.broadcast_to(make_position_grids(h, w, image.dtype).stacked(), (n, 2, h, w))
        return np.concatenate([image, grid], axis=1)
    raise ShapeError(f"append_coords expects [1,H,W] or [N,1,H,W], got {image.shape}")
