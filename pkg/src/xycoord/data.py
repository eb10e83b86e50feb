"""MNIST IDX parsing, dataset splits, and the two evaluation transforms."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    ShapeError,
    TrailingBytesError,
    TruncatedPayloadError,
)
from .nn.tensor import STREAM_SPLIT, RngState

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "MNIST_DATA_DIR"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
FETCH_HINT = (
    "Download the four MNIST IDX files ({}) into a directory, optionally gzipped, "
    "and pass it with --data-dir or the MNIST_DATA_DIR environment variable."
).format(", ".join(MNIST_FILES.values()))


@dataclass(frozen=True)
class IdxHeader:
    magic: int
    dims: tuple[int, ...]

    @property
    def header_size(self) -> int:
        return 4 + 4 * len(self.dims)


def _read_header(data: bytes, magic: int, ndims: int) -> IdxHeader:
    if len(data) < 4:
        raise TruncatedPayloadError(f"IDX stream of {len(data)} bytes is too short for a magic number", len(data))
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagicError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    end = 4 + 4 * ndims
    if len(data) < end:
        raise TruncatedPayloadError(f"IDX header needs {end} bytes, stream has {len(data)}", len(data))
    dims = struct.unpack(f">{ndims}I", data[4:end])
    return IdxHeader(got, tuple(dims))


def _payload(data: bytes, header: IdxHeader) -> np.ndarray:
    start = header.header_size
    size = int(np.prod(header.dims, dtype=np.int64))
    end = start + size
    if len(data) < end:
        raise TruncatedPayloadError(f"IDX payload needs {size} bytes after the header, "
                                    f"stream ends after {len(data) - start}", len(data))
    if len(data) > end:
        raise TrailingBytesError(f"{len(data) - end} unexpected bytes after the IDX payload", end)
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=start)


def parse_idx_images(data: bytes, dtype=np.float32) -> np.ndarray:
    """IDX image stream -> [N,1,H,W] array scaled to [0, 1]."""
    header = _read_header(data, IMAGES_MAGIC, 3)
    n, h, w = header.dims
    raw = _payload(data, header).reshape(n, 1, h, w)
    return (raw.astype(np.float64) / 255.0).astype(dtype)


def parse_idx_labels(data: bytes) -> np.ndarray:
    header = _read_header(data, LABELS_MAGIC, 1)
    return _payload(data, header).astype(np.int64)


def write_idx_images(images: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx_images` for [N,1,H,W] or [N,H,W] uint8 / [0,1] float input."""
    arr = np.asarray(images)
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise ShapeError("IDX images are single-channel")
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise ShapeError(f"expected [N,H,W] images, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    return struct.pack(">4I", IMAGES_MAGIC, *arr.shape) + arr.tobytes(order="C")


def write_idx_labels(labels: np.ndarray) -> bytes:
    arr = np.asarray(labels).astype(np.uint8)
    return struct.pack(">2I", LABELS_MAGIC, arr.shape[0]) + arr.tobytes()


def _read_maybe_gzip(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def resolve_data_dir(data_dir: str | os.PathLike | None) -> Path:
    chosen = data_dir or os.environ.get(DATA_DIR_ENV)
    if not chosen:
        raise DataError(f"no MNIST data directory given. {FETCH_HINT}")
    path = Path(chosen)
    if not path.is_dir():
        raise DataError(f"MNIST data directory {path} does not exist. {FETCH_HINT}")
    return path


def _locate(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    raise DataError(f"missing {stem} (or {stem}.gz) in {directory}. {FETCH_HINT}")


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray  # [1,H,W] in [0,1]
    label: int


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    images: np.ndarray  # [N,1,H,W]
    labels: np.ndarray  # [N]

    def __post_init__(self):
        if self.name not in ("train", "validation", "test"):
            raise ValueError(f"split name must be train/validation/test, got {self.name!r}")
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"split {self.name}: images {self.images.shape} vs labels {self.labels.shape}")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    @property
    def resolution(self) -> tuple[int, int]:
        return int(self.images.shape[2]), int(self.images.shape[3])

    def take(self, count: int | None) -> "DatasetSplit":
        if count is None or count >= len(self):
            return self
        return DatasetSplit(self.name, self.images[:count], self.labels[:count])

    def map_images(self, fn) -> "DatasetSplit":
        return DatasetSplit(self.name, fn(self.images), self.labels)


@dataclass(frozen=True)
class MnistData:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def test_split(self, count: int | None = None) -> DatasetSplit:
        return DatasetSplit("test", self.test_images, self.test_labels).take(count)


def load_mnist(data_dir: str | os.PathLike | None = None, dtype=np.float32) -> MnistData:
    directory = resolve_data_dir(data_dir)
    parts = {key: _read_maybe_gzip(_locate(directory, stem)) for key, stem in MNIST_FILES.items()}
    data = MnistData(
        parse_idx_images(parts["train_images"], dtype),
        parse_idx_labels(parts["train_labels"]),
        parse_idx_images(parts["test_images"], dtype),
        parse_idx_labels(parts["test_labels"]),
    )
    if data.train_images.shape[0] != data.train_labels.shape[0] or \
            data.test_images.shape[0] != data.test_labels.shape[0]:
        raise DataError("MNIST image and label counts disagree")
    return data


def split_indices(total: int, seed: int, val_count: int = 5000, pool_size: int = 50000) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``total`` indices; the first ``pool_size`` are split into train / validation.

    Validation takes the last ``val_count`` entries of the pool, train the
    rest. The defaults give the 45,000 / 5,000 layout out of 60,000.
    """
    if val_count < 0 or pool_size < 1:
        raise ConfigError("val_count must be >= 0 and pool_size >= 1")
    if pool_size > total:
        raise ConfigError(f"pool of {pool_size} images requested but only {total} available")
    if val_count >= pool_size:
        raise ConfigError(f"val_count {val_count} leaves no training images in a pool of {pool_size}")
    perm = RngState(seed).stream(STREAM_SPLIT).permutation(total)
    pool = perm[:pool_size]
    return pool[:pool_size - val_count], pool[pool_size - val_count:]


def split_train_val(images: np.ndarray, labels: np.ndarray, seed: int, val_count: int = 5000,
                    pool_size: int = 50000) -> tuple[DatasetSplit, DatasetSplit]:
    train_idx, val_idx = split_indices(len(labels), seed, val_count, pool_size)
    return (DatasetSplit("train", images[train_idx], labels[train_idx]),
            DatasetSplit("validation", images[val_idx], labels[val_idx]))


def mean_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the last two axes (even extents required)."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 mean pooling needs even extents, got {h}x{w}")
    return x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align-corners: output sample i sits at source coordinate i * (n_in - 1) / (n_out - 1)
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize (align-corners) over the last two axes."""
    ry = _interp_matrix(x.shape[-2], height)
    rx = _interp_matrix(x.shape[-1], width)
    out = np.einsum("ij,...jk,lk->...il", ry, x.astype(np.float64), rx)
    return out.astype(x.dtype)


def degrade_resolution(image: np.ndarray) -> np.ndarray:
    """Halve the resolution with 2x2 mean pooling, then upsample bilinearly back to the original size."""
    h, w = image.shape[-2:]
    out = resize_bilinear(mean_pool2(image), h, w)
    return np.clip(out, 0.0, 1.0)


def translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by (dx, dy) pixels: out[i, j] = in[i - dy, j - dx], zero fill outside."""
    h, w = image.shape[-2:]
    if abs(dx) >= w or abs(dy) >= h:
        raise ConfigError(f"shift ({dx}, {dy}) is too large for a {h}x{w} image")
    out = np.zeros_like(image)
    src_rows = slice(max(0, -dy), h - max(0, dy))
    dst_rows = slice(max(0, dy), h - max(0, -dy))
    src_cols = slice(max(0, -dx), w - max(0, dx))
    dst_cols = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_rows, dst_cols] = image[..., src_rows, src_cols]
    return out
