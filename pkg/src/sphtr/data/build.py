"""Spherical classification datasets from planar sources."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .. import groups
from ..sampling import SamplingGrid
from . import sources
from .cache import write_cache
from .signals import FULL_SPHERE_ERP, TANGENT_FOV, sample_batch

log = logging.getLogger(__name__)

MNIST = "mnist"
CIFAR = "cifar"
ROTATE_MODES = ("none", "so3", "group")
CIFAR_FOV_DEG = 65.5
_BATCH = 500


def load_source(source: str, root, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Images as float64 ``(n, H, W, C)`` in [0, 1] plus uint8 labels."""
    if source == MNIST:
        images, labels = sources.load_mnist(root, split)
        images = images[..., None]
    elif source == CIFAR:
        images, labels = sources.load_cifar(root, split)
    else:
        raise ValueError(f"unknown source {source!r}")
    return images, labels


def placement(source: str) -> dict:
    if source == MNIST:
        return {"mapping": FULL_SPHERE_ERP}
    return {"mapping": TANGENT_FOV, "fov_deg": CIFAR_FOV_DEG, "center": (0.0, 0.0, 1.0)}


def draw_rotations(rotate: str, count: int, rng: np.random.Generator,
                   solid: Optional[str]) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices ``(count, 3, 3)`` and group ids (-1 outside a group)."""
    ids = np.full(count, -1, dtype=np.int16)
    if rotate == "none":
        return np.broadcast_to(np.eye(3), (count, 3, 3)).copy(), ids
    if rotate == "so3":
        return np.stack([groups.random_so3(rng).matrix for _ in range(count)]), ids
    if rotate == "group":
        if solid is None:
            raise ValueError("rotate=group needs a grid with a symmetry group")
        elems = groups.enumerate_group(solid)
        ids = rng.integers(0, len(elems), size=count).astype(np.int16)
        return np.stack([elems[i].matrix for i in ids]), ids
    raise ValueError(f"unknown rotate mode {rotate!r}, expected one of {ROTATE_MODES}")


def convert(images: np.ndarray, grid: SamplingGrid, rotations: np.ndarray,
            source: str) -> np.ndarray:
    """``(n, N, D*C)`` float32 sequences; batches are independent of each other."""
    place = placement(source)
    out = np.empty((len(images), grid.num_patches, grid.patch_size * images.shape[-1]),
                   dtype=np.float32)
    for start in range(0, len(images), _BATCH):
        sl = slice(start, start + _BATCH)
        imgs = images[sl].astype(np.float64) / 255.0
        out[sl] = sample_batch(imgs, grid, rotations[sl], **place)
    return out


def build_dataset(source: str, grid: SamplingGrid, rotate: str, seed: int, out_dir,
                  root=None, limits: Optional[dict] = None) -> dict:
    """Convert the train and test splits; returns ``{split: cache path}``.

    ``limits`` caps the number of examples taken (in source order) per split.
    """
    if rotate not in ROTATE_MODES:
        raise ValueError(f"unknown rotate mode {rotate!r}, expected one of {ROTATE_MODES}")
    root = sources.data_root(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = limits or {}
    paths = {}
    for split_idx, split in enumerate(("train", "test")):
        images, labels = load_source(source, root, split)
        n = limits.get(split)
        if n is not None:
            images, labels = images[:n], labels[:n]
        rng = np.random.default_rng([seed, split_idx])
        rotations, ids = draw_rotations(rotate, len(images), rng, grid.symmetry)
        values = convert(images, grid, rotations, source)
        header = {
            "source": source, "split": split, "method": grid.method,
            "params": grid.params, "N": grid.num_patches, "D": grid.patch_size,
            "C": int(images.shape[-1]), "seed": seed, "rotate": rotate,
        }
        path = out_dir / f"{source}_{split}.sphd"
        write_cache(path, header, values, labels, ids, rotations)
        log.info("wrote %s (%d examples)", path, len(values))
        paths[split] = path
    return paths
