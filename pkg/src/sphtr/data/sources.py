"""Raw planar image sources.

MNIST IDX layout (big-endian): magic ``0x00000803`` (images) or ``0x00000801``
(labels), then one uint32 per dimension, then uint8 data. Files may be gzipped.

CIFAR-10 binary layout: records of 1 label byte followed by 3072 pixel bytes,
1024 per channel in R, G, B order, each channel row-major 32x32. Training
batches ``data_batch_1.bin`` .. ``data_batch_5.bin``, test ``test_batch.bin``.
"""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_ROOT_ENV = "SPHTR_DATA"


class IngestionError(RuntimeError):
    pass


def data_root(root=None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def _read_maybe_gz(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            try:
                raw = candidate.read_bytes()
                return gzip.decompress(raw) if candidate.suffix == ".gz" else raw
            except (OSError, EOFError) as exc:
                raise IngestionError(f"{candidate}: {exc}") from exc
    raise IngestionError(f"{path}: file not found")


def read_idx(path) -> np.ndarray:
    path = Path(path)
    raw = _read_maybe_gz(path)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IngestionError(f"{path}: not an unsigned-byte IDX file")
    ndim = raw[3]
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    off = 4 + 4 * ndim
    expected = int(np.prod(dims))
    if len(raw) - off != expected:
        raise IngestionError(f"{path}: expected {expected} data bytes, found {len(raw) - off}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_mnist(root, split: str) -> tuple[np.ndarray, np.ndarray]:
    """``(n, 28, 28)`` uint8 images and ``(n,)`` labels."""
    img_name, lbl_name = MNIST_FILES[split]
    root = Path(root)
    images = read_idx(root / img_name)
    labels = read_idx(root / lbl_name)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise IngestionError(
            f"{root}: inconsistent MNIST {split} files {images.shape} / {labels.shape}")
    return images, labels


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    if len(raw) % CIFAR_RECORD:
        raise IngestionError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].copy()
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).copy()
    return images, labels


def write_cifar_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planes], axis=1)
    Path(path).write_bytes(rec.tobytes())


def load_cifar(root, split: str) -> tuple[np.ndarray, np.ndarray]:
    """``(n, 32, 32, 3)`` uint8 images and ``(n,)`` labels."""
    root = Path(root)
    parts = [read_cifar_batch(root / name) for name in CIFAR_FILES[split]
             if split == "test" or (root / name).exists()]
    if not parts:
        raise IngestionError(f"{root}: no CIFAR {split} batches found")
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ----------------------------------------------------------------------------
# Procedural CIFAR-style source

SYNTH_CLASSES = ("disk", "square", "triangle", "ring", "plus", "hstripes",
                 "dstripes", "checker", "twodisks", "cross")


def _shape_mask(kind: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cx, cy = rng.uniform(0.35, 0.65, 2) * size
    r = rng.uniform(0.18, 0.32) * size
    ang = rng.uniform(0, np.pi)
    ca, sa = np.cos(ang), np.sin(ang)
    u = ((xx - cx) * ca + (yy - cy) * sa) / r
    v = (-(xx - cx) * sa + (yy - cy) * ca) / r
    rad = np.hypot(u, v)
    name = SYNTH_CLASSES[kind]
    if name == "disk":
        return rad <= 1.0
    if name == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.85
    if name == "triangle":
        return (v >= -0.6) & (v <= 0.9 - 1.7 * np.abs(u))
    if name == "ring":
        return (rad <= 1.0) & (rad >= 0.6)
    if name == "plus":
        return ((np.abs(u) <= 0.3) | (np.abs(v) <= 0.3)) & (np.maximum(np.abs(u), np.abs(v)) <= 1.0)
    if name == "cross":
        d1, d2 = np.abs(u - v), np.abs(u + v)
        return ((d1 <= 0.4) | (d2 <= 0.4)) & (rad <= 1.1)
    period = rng.uniform(0.5, 0.8)
    if name == "hstripes":
        return (np.floor(v / period) % 2 == 0) & (rad <= 1.3)
    if name == "dstripes":
        return (np.floor((u + v) / period) % 2 == 0) & (rad <= 1.3)
    if name == "checker":
        return ((np.floor(u / period) + np.floor(v / period)) % 2 == 0) & (rad <= 1.3)
    # twodisks
    off = 0.55
    return (np.hypot(u - off, v) <= 0.45) | (np.hypot(u + off, v) <= 0.45)


def synth_cifar_images(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` 32x32 RGB images of ten procedural shape classes, balanced labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(SYNTH_CLASSES)
    rng.shuffle(labels)
    yy = np.linspace(0.0, 1.0, 32)[:, None, None]
    images = np.empty((n, 32, 32, 3), dtype=np.uint8)
    for i, kind in enumerate(labels):
        bg0, bg1 = rng.uniform(0.0, 1.0, (2, 3))
        bg = bg0 + (bg1 - bg0) * yy * np.ones((1, 32, 1))
        fg = rng.uniform(0.0, 1.0, 3)
        while np.abs(fg - bg.mean(axis=(0, 1))).sum() < 0.6:
            fg = rng.uniform(0.0, 1.0, 3)
        mask = _shape_mask(int(kind), rng)[..., None]
        img = np.where(mask, fg, bg) + rng.normal(0.0, 0.04, (32, 32, 3))
        images[i] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_synth_cifar(root, n_train: int = 50000, n_test: int = 10000, seed: int = 0) -> Path:
    """Write a procedural CIFAR-style source in the CIFAR-10 binary layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    images, labels = synth_cifar_images(n_train, seed)
    for i, chunk in enumerate(np.array_split(np.arange(n_train), 5), start=1):
        write_cifar_batch(root / f"data_batch_{i}.bin", images[chunk], labels[chunk])
    images, labels = synth_cifar_images(n_test, seed + 1)
    write_cifar_batch(root / "test_batch.bin", images, labels)
    return root


def random_images(n: int, seed: int, size: int = 28, channels: int = 1,
                  blobs: int = 6) -> np.ndarray:
    """``(n, size, size, channels)`` uint8 images of random Gaussian blobs.

    Stand-in for MNIST-style signals when no real source is needed.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    out = np.empty((n, size, size, channels), dtype=np.uint8)
    for i in range(n):
        img = np.zeros((size, size, channels))
        for _ in range(blobs):
            cx, cy = rng.uniform(0.15, 0.85, 2) * size
            r = rng.uniform(0.05, 0.2) * size
            img += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))[..., None] \
                * rng.uniform(0.3, 1.0, channels)
        out[i] = np.clip(np.round(img / img.max() * 255.0), 0, 255).astype(np.uint8)
    return out
