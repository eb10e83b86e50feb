"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"XYCKPT\\0\\0"                 8-byte magic
    u32 format version
    u32 header length, header bytes (canonical JSON: kind, spec, dtype, parameter names/shapes)
    parameter payload              raw values in header order, dtype from the header
    u32 crc32 per 4 KiB block of everything above
    u32 block count
    32-byte SHA-256 of everything above

The per-block CRCs only serve to report where a corrupted file first
differs; integrity is decided by the SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, ChecksumError, ShapeError
from .models import Network, NetworkSpec, Vae, VaeSpec, spec_to_dict

MAGIC = b"XYCKPT\x00\x00"
FORMAT_VERSION = 1
BLOCK = 4096


def _serialize(net) -> bytes:
    params = net.parameters()
    dtype = np.dtype(net.dtype).newbyteorder("<")
    header = {
        "kind": net.kind,
        "spec": spec_to_dict(net.spec),
        "dtype": dtype.str,
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray(MAGIC)
    body += struct.pack("<II", FORMAT_VERSION, len(hbytes))
    body += hbytes
    for p in params:
        body += np.ascontiguousarray(p.value, dtype=dtype).tobytes()
    crcs = [zlib.crc32(body[i:i + BLOCK]) for i in range(0, len(body), BLOCK)]
    body += struct.pack(f"<{len(crcs)}I", *crcs)
    body += struct.pack("<I", len(crcs))
    body += hashlib.sha256(body).digest()
    return bytes(body)


def save_checkpoint(net, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_serialize(net))
    return path


def _verify(data: bytes) -> bytes:
    if len(data) < len(MAGIC) + 8 + 36 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    digest = data[-32:]
    if hashlib.sha256(data[:-32]).digest() == digest:
        (nblocks,) = struct.unpack("<I", data[-36:-32])
        return data[:-36 - 4 * nblocks]
    # locate the damage for the error message
    (nblocks,) = struct.unpack("<I", data[-36:-32])
    body_len = len(data) - 36 - 4 * nblocks
    if body_len <= 0 or (body_len + BLOCK - 1) // BLOCK != nblocks:
        raise ChecksumError("checkpoint checksum mismatch; block table damaged", max(len(data) - 36, 0))
    crcs = struct.unpack(f"<{nblocks}I", data[body_len:body_len + 4 * nblocks])
    for i, crc in enumerate(crcs):
        if zlib.crc32(data[i * BLOCK:min((i + 1) * BLOCK, body_len)]) != crc:
            raise ChecksumError("checkpoint checksum mismatch", i * BLOCK)
    raise ChecksumError("checkpoint checksum mismatch in trailer", body_len)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Validated (header, {name: array}) from a checkpoint file."""
    body = _verify(Path(path).read_bytes())
    off = len(MAGIC)
    version, hlen = struct.unpack("<II", body[off:off + 8])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    off += 8
    header = json.loads(body[off:off + hlen])
    off += hlen
    dtype = np.dtype(header["dtype"])
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * dtype.itemsize
        arrays[entry["name"]] = np.frombuffer(body, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape)
        off += size
    if off != len(body):
        raise CheckpointError("checkpoint payload length does not match its header")
    return header, arrays


def load_checkpoint(path: str | Path, into=None):
    """Rebuild the saved network (or copy into ``into``, which must match parameter for parameter)."""
    header, arrays = read_checkpoint(path)
    if into is None:
        if header["kind"] == "classifier":
            into = Network(NetworkSpec.from_dict(header["spec"]), None)
        elif header["kind"] == "vae":
            into = Vae(VaeSpec.from_dict(header["spec"]), None)
        else:
            raise CheckpointError(f"unknown network kind {header['kind']!r}")
    params = {p.name: p for p in into.parameters()}
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))
        raise ShapeError(f"checkpoint and network disagree on parameters: {missing}")
    for name, arr in arrays.items():
        p = params[name]
        if p.shape != arr.shape:
            raise ShapeError(f"parameter {name!r}: checkpoint shape {arr.shape}, network shape {p.shape}")
        p.value[...] = arr
    return into
