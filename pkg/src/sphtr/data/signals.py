"""Planar images placed on the sphere and sampled onto grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..groups import RotationElement
from ..sampling import SamplingGrid, cartesian_to_spherical

FULL_SPHERE_ERP = "full_sphere_erp"
TANGENT_FOV = "tangent_fov"


def bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray,
             wrap_cols: bool) -> np.ndarray:
    """Sample ``img`` (H, W, C) at fractional pixel coordinates.

    Rows are clamped to the image; columns wrap around when ``wrap_cols``.
    Returns ``(..., C)``.
    """
    return bilinear_batch(img[None], rows[None], cols[None], wrap_cols)[0]


def bilinear_batch(imgs: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                   wrap_cols: bool) -> np.ndarray:
    """Per-image bilinear lookup: ``imgs`` (B, H, W, C), coordinates (B, ...)."""
    B, H, W = imgs.shape[:3]
    b = np.arange(B).reshape((B,) + (1,) * (rows.ndim - 1))
    rows = np.clip(rows, 0.0, H - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    fr = (rows - r0)[..., None]
    if wrap_cols:
        c0f = np.floor(cols)
        fc = (cols - c0f)[..., None]
        c0 = np.mod(c0f.astype(np.int64), W)
        c1 = np.mod(c0 + 1, W)
    else:
        cols = np.clip(cols, 0.0, W - 1.0)
        c0 = np.floor(cols).astype(np.int64)
        c1 = np.minimum(c0 + 1, W - 1)
        fc = (cols - c0)[..., None]
    top = imgs[b, r0, c0] * (1.0 - fc) + imgs[b, r0, c1] * fc
    bot = imgs[b, r1, c0] * (1.0 - fc) + imgs[b, r1, c1] * fc
    return top * (1.0 - fr) + bot * fr


def tangent_basis(center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed (right, down) tangent axes at ``center``.

    For the default centre (0, 0, 1) the image's right is +x and down is -y.
    """
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    up_hint = np.array([0.0, 1.0, 0.0]) if abs(c[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(up_hint, c)
    right /= np.linalg.norm(right)
    down = np.cross(c, right) * -1.0
    return right, down


@dataclass(frozen=True)
class SphericalSignal:
    image: np.ndarray  # (H, W, C) in [0, 1]
    mapping: str = FULL_SPHERE_ERP
    fov_deg: float = 0.0
    center: tuple = (0.0, 0.0, 1.0)
    background: float = 0.0

    @property
    def channels(self) -> int:
        return self.image.shape[2]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Signal values ``(..., C)`` at unit vectors ``(..., 3)``."""
        points = np.asarray(points, dtype=np.float64)
        return evaluate_batch(self.image[None], points[None], self.mapping, self.fov_deg,
                              self.center, self.background)[0]


def evaluate_batch(images: np.ndarray, points: np.ndarray, mapping: str,
                   fov_deg: float = 0.0, center=(0.0, 0.0, 1.0),
                   background: float = 0.0) -> np.ndarray:
    """Values of B signals sharing one placement, each at its own points ``(B, M, 3)``."""
    H, W = images.shape[1:3]
    if mapping == FULL_SPHERE_ERP:
        theta, phi = cartesian_to_spherical(points)
        rows = theta / np.pi * H - 0.5
        cols = phi / (2 * np.pi) * W - 0.5
        return bilinear_batch(images, rows, cols, wrap_cols=True)
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    right, down = tangent_basis(c)
    depth = points @ c
    half = np.tan(np.radians(fov_deg) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (points @ right) / depth / half
        v = (points @ down) / depth / half
    inside = (depth > 0) & (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    u = np.where(inside, u, 0.0)
    v = np.where(inside, v, 0.0)
    cols = (u + 1.0) / 2.0 * W - 0.5
    rows = (v + 1.0) / 2.0 * H - 0.5
    vals = bilinear_batch(images, rows, cols, wrap_cols=False)
    return np.where(inside[..., None], vals, background)


def _as_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W[, C]) image, got shape {img.shape}")
    return img


def signal_from_image_full_sphere(img) -> SphericalSignal:
    """Stretch the image over the whole (colatitude, longitude) rectangle."""
    return SphericalSignal(_as_image(img), FULL_SPHERE_ERP)


def signal_from_image_fov(img, fov_deg: float = 65.5,
                          center=(0.0, 0.0, 1.0)) -> SphericalSignal:
    """Gnomonic placement of the image inside a square field of view."""
    if not 0.0 < fov_deg < 180.0:
        raise ValueError(f"field of view must lie in (0, 180) degrees, got {fov_deg}")
    return SphericalSignal(_as_image(img), TANGENT_FOV, float(fov_deg),
                           tuple(float(x) for x in center))


def sample_sequence(sig: SphericalSignal, grid: SamplingGrid,
                    R: Optional[RotationElement | np.ndarray] = None) -> np.ndarray:
    """``(N, D*C)`` patch matrix of the signal rotated by ``R``.

    Rotating the signal by R is evaluating the original at R^-1 p.
    """
    pts = grid.points
    if R is not None:
        mat = R.matrix if isinstance(R, RotationElement) else np.asarray(R)
        pts = pts @ mat  # rows are (R^T p)^T
    vals = sig.evaluate(pts)  # (N*D, C)
    return vals.reshape(grid.num_patches, grid.patch_size * sig.channels)


def sample_batch(images: np.ndarray, grid: SamplingGrid, rotations: np.ndarray,
                 mapping: str, fov_deg: float = 0.0, center=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Batched :func:`sample_sequence`: ``images`` (B, H, W, C), ``rotations`` (B, 3, 3)."""
    pts = np.einsum("mi,bij->bmj", grid.points, rotations)  # R^T p per image
    vals = evaluate_batch(images, pts, mapping, fov_deg, center)
    return vals.reshape(len(images), grid.num_patches, grid.patch_size * images.shape[-1])
