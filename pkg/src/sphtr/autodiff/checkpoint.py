"""Binary checkpoint of named tensors.

Layout (little-endian): magic ``SPHK``, uint32 version, uint32 count, then per
tensor: uint16 name length, UTF-8 name, uint8 ndim, ndim x uint32 dims,
float32 values in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPHK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, expected_shapes: dict | None = None) -> dict:
    """Read a checkpoint; with ``expected_shapes`` the names and shapes must match exactly."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    if expected_shapes is not None:
        missing = set(expected_shapes) - set(out)
        extra = set(out) - set(expected_shapes)
        if missing or extra:
            raise CheckpointError(
                f"{path}: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected_shapes.items():
            if tuple(out[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"{path}: {name} has shape {out[name].shape}, expected {tuple(shape)}")
    return out
