import gzip
import struct

import numpy as np
import pytest

from oracles import bilinear_loops, mean_pool_loops
from xycoord.data import (
    BadMagicError,
    degrade_resolution,
    load_mnist,
    parse_idx_images,
    parse_idx_labels,
    split_indices,
    split_train_val,
    translate,
    write_idx_images,
    write_idx_labels,
)
from xycoord.errors import ConfigError, DataError, ShapeError, TrailingBytesError, TruncatedPayloadError


def independent_idx_writer(pixels_u8):
    """Hand-rolled IDX3 writer, byte by byte."""
    n, h, w = pixels_u8.shape
    out = bytearray([0, 0, 8, 3])
    for d in (n, h, w):
        out += d.to_bytes(4, "big")
    for v in pixels_u8.reshape(-1):
        out.append(int(v))
    return bytes(out)


def test_minimal_synthetic_image_file():
    raw = bytes.fromhex("00000803") + struct.pack(">III", 1, 2, 2) + bytes([0, 255, 0, 255])
    assert len(raw) == 20
    img = parse_idx_images(raw)
    assert img.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(img[0, 0], [[0, 1], [0, 1]])


def test_round_trip_against_independent_writer():
    px = np.random.default_rng(0).integers(0, 256, size=(3, 5, 4), dtype=np.uint8)
    raw = independent_idx_writer(px)
    assert write_idx_images(px) == raw
    parsed = parse_idx_images(raw, np.float64)
    np.testing.assert_array_equal(np.rint(parsed[:, 0] * 255).astype(np.uint8), px)
    np.testing.assert_array_equal(parsed[:, 0], px / 255.0)


def test_labels_round_trip():
    labels = np.array([3, 1, 4, 1, 5, 9])
    np.testing.assert_array_equal(parse_idx_labels(write_idx_labels(labels)), labels)


def test_parse_errors_carry_offsets():
    good = write_idx_images(np.zeros((2, 3, 3), np.uint8))
    with pytest.raises(BadMagicError) as e:
        parse_idx_images(b"\x00\x00\x08\x01" + good[4:])
    assert e.value.offset == 0
    with pytest.raises(TruncatedPayloadError) as e:
        parse_idx_images(good[:-1])
    assert e.value.offset == len(good) - 1
    with pytest.raises(TruncatedPayloadError):
        parse_idx_images(good[:10])
    with pytest.raises(TrailingBytesError) as e:
        parse_idx_images(good + b"\x00\x00")
    assert e.value.offset == len(good)
    with pytest.raises(BadMagicError):
        parse_idx_labels(good)
    with pytest.raises(TruncatedPayloadError):
        parse_idx_labels(b"\x00\x00")


def test_load_mnist_gzip_and_missing(tmp_path, monkeypatch):
    imgs = np.random.default_rng(1).integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3])
    (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(write_idx_images(imgs)))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(write_idx_labels(labels))
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(write_idx_images(imgs[:2]))
    (tmp_path / "t10k-labels-idx1-ubyte.gz").write_bytes(gzip.compress(write_idx_labels(labels[:2])))
    d = load_mnist(tmp_path)
    assert d.train_images.shape == (4, 1, 28, 28) and d.test_labels.tolist() == [0, 1]
    monkeypatch.setenv("MNIST_DATA_DIR", str(tmp_path))
    assert load_mnist().train_labels.tolist() == [0, 1, 2, 3]
    (tmp_path / "t10k-images-idx3-ubyte").unlink()
    with pytest.raises(DataError, match="t10k-images"):
        load_mnist(tmp_path)
    monkeypatch.delenv("MNIST_DATA_DIR")
    with pytest.raises(DataError, match="--data-dir"):
        load_mnist(None)


def test_official_mnist_counts(mnist):
    assert mnist.train_images.shape == (60000, 1, 28, 28)
    assert mnist.test_images.shape == (10000, 1, 28, 28)
    assert mnist.train_images.min() >= 0 and mnist.train_images.max() <= 1


def test_split_defaults_and_determinism():
    tr, va = split_indices(60000, seed=3)
    assert len(tr) == 45000 and len(va) == 5000
    assert not set(tr) & set(va)
    tr2, va2 = split_indices(60000, seed=3)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    tr3, _ = split_indices(60000, seed=4)
    assert not np.array_equal(tr, tr3)


def test_split_val_zero_and_errors():
    tr, va = split_indices(100, seed=0, val_count=0, pool_size=80)
    assert len(va) == 0 and len(tr) == 80
    with pytest.raises(ConfigError):
        split_indices(100, seed=0, pool_size=101)
    with pytest.raises(ConfigError):
        split_indices(100, seed=0, val_count=80, pool_size=80)


def test_split_train_val_builds_splits():
    imgs = np.arange(10 * 4, dtype=np.float32).reshape(10, 1, 2, 2)
    labels = np.arange(10) % 10
    tr, va = split_train_val(imgs, labels, seed=1, val_count=2, pool_size=8)
    assert (tr.name, len(tr), va.name, len(va)) == ("train", 6, "validation", 2)
    assert set(tr.labels) | set(va.labels) <= set(labels)
    assert tr[0].pixels.shape == (1, 2, 2)


def test_degrade_constant_and_checkerboard():
    c = np.full((1, 28, 28), 0.37)
    np.testing.assert_allclose(degrade_resolution(c), 0.37, atol=1e-12)
    checker = (np.indices((28, 28)).sum(axis=0) % 2).astype(np.float64)[None]
    np.testing.assert_allclose(degrade_resolution(checker), 0.5, atol=1e-12)


def test_degrade_matches_two_stage_oracle():
    img = np.random.default_rng(2).uniform(size=(1, 28, 28))
    ref = bilinear_loops(mean_pool_loops(img[0]), 28, 28)
    out = degrade_resolution(img)
    np.testing.assert_allclose(out[0], ref, atol=1e-6)
    assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_allclose(degrade_resolution(out)[0],
                               bilinear_loops(mean_pool_loops(ref), 28, 28), atol=1e-6)


def test_degrade_rejects_odd():
    with pytest.raises(ShapeError):
        degrade_resolution(np.zeros((1, 27, 28)))


def test_translate_examples():
    img = np.random.default_rng(3).uniform(size=(1, 28, 28))
    np.testing.assert_array_equal(translate(img, 0, 0), img)
    assert not translate(np.zeros((1, 28, 28)), 4, -4).any()
    lit = np.zeros((1, 28, 28))
    lit[0, 5, 5] = 1
    out = translate(lit, 3, -2)
    assert out[0, 3, 8] == 1 and out.sum() == 1
    with pytest.raises(ConfigError):
        translate(img, 28, 0)


@pytest.mark.parametrize("dx,dy", [(2, -4), (-3, 1), (4, 4)])
def test_translate_inverse_on_interior(dx, dy):
    img = np.random.default_rng(4).uniform(size=(1, 28, 28))
    back = translate(translate(img, dx, dy), -dx, -dy)
    rows = slice(max(0, -dy), 28 - max(0, dy))
    cols = slice(max(0, -dx), 28 - max(0, dx))
    np.testing.assert_array_equal(back[0, rows, cols], img[0, rows, cols])
