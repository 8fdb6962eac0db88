"""Dataset cache files.

Layout (little-endian)::

    b"SPHD"                 magic
    uint32                  format version
    uint32                  header length in bytes
    header                  UTF-8 JSON, sorted keys: method, grid params, N, D, C,
                            count, seed, source, split, rotate
    float32[count, N, D*C]  patch matrices
    uint8[count]            labels
    int16[count]            group element id of the applied rotation, -1 if none/SO(3)
    float32[count, 3, 3]    applied rotation matrices
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SPHD"
VERSION = 1


class CacheError(ValueError):
    pass


@dataclass
class DatasetCache:
    header: dict
    values: np.ndarray  # (count, N, D*C) float32
    labels: np.ndarray  # (count,) uint8
    rotation_ids: np.ndarray  # (count,) int16
    rotations: np.ndarray  # (count, 3, 3) float32

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def subset(self, n: int) -> "DatasetCache":
        header = dict(self.header, count=min(n, len(self)))
        return DatasetCache(header, self.values[:n], self.labels[:n],
                            self.rotation_ids[:n], self.rotations[:n])


def write_cache(path, header: dict, values, labels, rotation_ids, rotations) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    count = len(values)
    header = dict(header, count=count)
    if values.shape[1:] != (header["N"], header["D"] * header["C"]):
        raise CacheError(f"values shape {values.shape} disagrees with header")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        fh.write(values.tobytes())
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())
        fh.write(np.asarray(rotation_ids, dtype="<i2").tobytes())
        fh.write(np.ascontiguousarray(rotations, dtype="<f4").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if head[:4] != MAGIC:
            raise CacheError(f"{path}: not a dataset cache")
        version, hlen = struct.unpack("<II", head[4:])
        if version != VERSION:
            raise CacheError(f"{path}: unsupported cache version {version}")
        return json.loads(fh.read(hlen).decode("utf-8"))


def read_cache(path) -> DatasetCache:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CacheError(f"{path}: not a dataset cache")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    off = 12 + hlen
    n, N, width = header["count"], header["N"], header["D"] * header["C"]
    expected = off + n * (N * width * 4 + 1 + 2 + 36)
    if len(buf) != expected:
        raise CacheError(f"{path}: size {len(buf)} != expected {expected}")
    values = np.frombuffer(buf, dtype="<f4", count=n * N * width, offset=off).reshape(n, N, width)
    off += values.nbytes
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)
    off += n
    rot_ids = np.frombuffer(buf, dtype="<i2", count=n, offset=off)
    off += 2 * n
    rots = np.frombuffer(buf, dtype="<f4", count=9 * n, offset=off).reshape(n, 3, 3)
    return DatasetCache(header, values, labels, rot_ids, rots)
