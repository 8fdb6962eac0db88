"""Rotation equivariance error of the encoder stack over a grid's symmetry group.

For a sample x and group element R the error is

    std(sigma_R . Phi(x) - Phi(L_R x)) / std(Phi(x))

with std taken over all entries, averaged over (sample, rotation) pairs. The
rotations cycle through the whole group. ``L_R x`` is either the patch
permutation sigma_R applied to the input rows (``PATCH_PERM``) or the signal
rotated and sampled again (``RESAMPLE``), which may also reorder points inside
a patch.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .data.build import placement
from .data.signals import sample_batch
from .data.sources import random_images
from .groups import GeometryError, enumerate_group, permute_rows, rotation_to_permutation
from .model import ModelConfig, encode, init_params
from .sampling import SamplingGrid

PATCH_PERM = "patch_perm"
RESAMPLE = "resample"
MODES = (PATCH_PERM, RESAMPLE)
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class UnsupportedModeError(GeometryError):
    pass


@dataclass
class EquivarianceReport:
    mode: str
    grid_params: dict
    layers: int
    n: int
    rotation_ids: np.ndarray
    per_rotation: np.ndarray  # mean delta per group element
    pair_deltas: np.ndarray  # one entry per (sample, rotation) pair
    precision: str
    use_pos_embedding: bool
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        return float(self.pair_deltas.mean())

    def csv_rows(self) -> list[str]:
        div = self.grid_params.get("div", "")
        return [f"{self.mode},{div},{self.layers},{rid},{d:.17g}"
                for rid, d in zip(self.rotation_ids, self.per_rotation)]

    def to_csv(self) -> str:
        return CSV_HEADER + "".join(r + "\n" for r in self.csv_rows())


CSV_HEADER = "mode,div,layers,rotation_id,delta\n"


def sweep_csv(reports: list[EquivarianceReport]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER)
    for rep in reports:
        for row in rep.csv_rows():
            buf.write(row + "\n")
    return buf.getvalue()


def _std(a: np.ndarray) -> np.ndarray:
    """Standard deviation over all entries but the leading batch axis."""
    return a.reshape(len(a), -1).std(axis=1)


def equivariance_error(grid: SamplingGrid, n: int = 100, layers: int = 8,
                       mode: str = PATCH_PERM, precision: str = "f64",
                       use_pos_embedding: bool = False, seed: int = 0,
                       images: Optional[np.ndarray] = None, dim: int = 16, heads: int = 8,
                       source: str = "mnist", scale: float = 1.0,
                       params: Optional[dict] = None) -> EquivarianceReport:
    """Measure the equivariance error of a freshly initialised encoder.

    ``images`` are planar uint8 ``(count, H, W, C)`` sources placed like
    ``source``; sample ``i`` uses ``images[i % count]`` and the group element
    ``i % |G|``. Random blob images are used when none are given. With the
    positional embedding enabled it is initialised randomly (std 0.02) so that
    it actually breaks the symmetry.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if precision not in PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}, expected one of {tuple(PRECISIONS)}")
    if grid.symmetry is None:
        raise UnsupportedModeError(f"{grid.method} grid has no symmetry group to rotate by")
    if n < 1:
        raise ValueError("n must be positive")
    dtype = PRECISIONS[precision]
    elements = enumerate_group(grid.symmetry)
    if images is None:
        images = random_images(min(n, 100), seed)
    channels = images.shape[-1]
    cfg = ModelConfig(num_patches=grid.num_patches, patch_dim=grid.patch_size * channels,
                      dim=dim, layers=layers, heads=heads, dropout=0.0,
                      use_pos_embedding=use_pos_embedding)
    if params is None:
        params = init_params(cfg, seed, dtype=dtype, pos_std=0.02 if use_pos_embedding else 0.0)

    idx = np.arange(n)
    rot_idx = idx % len(elements)
    imgs = images[idx % len(images)].astype(np.float64) / 255.0
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    x = sample_batch(imgs, grid, eye, **placement(source)) * scale
    sigmas = [rotation_to_permutation(e, grid).patch_perm for e in elements]
    if mode == PATCH_PERM:
        x_rot = np.stack([permute_rows(x[i], sigmas[r]) for i, r in enumerate(rot_idx)])
    else:
        mats = np.stack([elements[r].matrix for r in rot_idx])
        x_rot = sample_batch(imgs, grid, mats, **placement(source)) * scale

    with ad.no_grad():
        phi = encode(x.astype(dtype), params, cfg, layers=layers).data
        phi_rot = encode(x_rot.astype(dtype), params, cfg, layers=layers).data
    moved = np.stack([permute_rows(phi[i], sigmas[r]) for i, r in enumerate(rot_idx)])
    deltas = (_std(moved - phi_rot) / _std(phi)).astype(np.float64)

    ids = np.array([e.id for e in elements])
    per_rot = np.array([deltas[rot_idx == r].mean() if np.any(rot_idx == r) else np.nan
                        for r in range(len(elements))])
    return EquivarianceReport(mode, dict(grid.params), layers, n, ids, per_rot, deltas,
                              precision, use_pos_embedding, seed)
