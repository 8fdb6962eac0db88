"""Sphere sampling grids: equirectangular, cube map and subdivided icosahedron.

Every grid is an ordered array of unit vectors grouped patch-major into
``num_patches`` blocks of ``patch_size`` consecutive points. The transformer
consumes one patch per token, so the ordering here fixes the token order.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

ERP = "erp"
CUBE = "cube"
ICOSA = "icosa"
METHODS = (ERP, CUBE, ICOSA)

GRID_CSV_VERSION = 1


class ConfigurationError(ValueError):
    """Raised when grid parameters violate their preconditions."""


@dataclass(frozen=True)
class SamplingGrid:
    method: str
    points: np.ndarray  # (N*D, 3), float64, read-only
    num_patches: int
    patch_size: int
    params: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.points.shape != (self.num_patches * self.patch_size, 3):
            raise ConfigurationError(
                f"points shape {self.points.shape} does not match "
                f"N={self.num_patches} x D={self.patch_size}")
        self.points.setflags(write=False)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def symmetry(self) -> str | None:
        """Name of the polyhedral rotation group that maps this grid onto itself."""
        if self.params.get("lattice", "center") != "center":
            return None
        return {CUBE: CUBE, ICOSA: ICOSA}.get(self.method)

    def describe(self) -> str:
        params = " ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.method} {params}".strip()


def _freeze(points: np.ndarray) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    return points


def spherical_to_cartesian(theta, phi):
    """Colatitude ``theta`` in [0, pi], longitude ``phi`` in [0, 2pi) -> unit vectors."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cartesian_to_spherical(points):
    """Inverse of :func:`spherical_to_cartesian`; longitude wrapped into [0, 2pi)."""
    points = np.asarray(points, dtype=np.float64)
    z = np.clip(points[..., 2], -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2 * np.pi)
    return theta, phi


# ----------------------------------------------------------------------------
# ERP


LATTICES = ("center", "paper")


def build_erp_grid(H: int, W: int, P_h: int, P_w: int,
                   lattice: str = "center") -> SamplingGrid:
    """Equirectangular grid of ``H x W`` pixels split into ``P_h x P_w`` patches.

    ``lattice="center"`` samples pixel centres. ``lattice="paper"`` samples
    integer pixel coordinates, so the whole first row collapses onto the
    north pole; it exists for uniformity calibration only and breaks the
    distinct-points invariant.
    """
    _check_lattice(lattice)
    if min(H, W, P_h, P_w) < 1:
        raise ConfigurationError("ERP sizes must be positive")
    if W != 2 * H:
        raise ConfigurationError(f"ERP grid needs W = 2H, got H={H}, W={W}")
    if H % P_h or W % P_w:
        raise ConfigurationError(
            f"patch {P_h}x{P_w} does not tile the {H}x{W} grid")
    off = 0.5 if lattice == "center" else 0.0
    theta = np.pi * (np.arange(H) + off) / H
    phi = 2 * np.pi * (np.arange(W) + off) / W
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    pix = spherical_to_cartesian(tt, pp)  # (H, W, 3)
    nh, nw = H // P_h, W // P_w
    # (nh, P_h, nw, P_w, 3) -> patch lattice row-major, then slots row-major
    blocks = pix.reshape(nh, P_h, nw, P_w, 3).transpose(0, 2, 1, 3, 4)
    points = _freeze(blocks.reshape(-1, 3))
    return SamplingGrid(ERP, points, nh * nw, P_h * P_w,
                        _with_lattice({"H": H, "W": W, "P_h": P_h, "P_w": P_w}, lattice))


def _check_lattice(lattice):
    if lattice not in LATTICES:
        raise ConfigurationError(f"lattice must be one of {LATTICES}, got {lattice!r}")


def _with_lattice(params, lattice):
    if lattice != "center":
        params["lattice"] = lattice
    return params


def erp_pixel_index(grid: SamplingGrid) -> np.ndarray:
    """(row, col) of every grid point in the underlying ERP raster, in grid order."""
    H, W, P_h, P_w = (grid.params[k] for k in ("H", "W", "P_h", "P_w"))
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    rc = np.stack([rows, cols], axis=-1)
    blocks = rc.reshape(H // P_h, P_h, W // P_w, P_w, 2).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(-1, 2)


# ----------------------------------------------------------------------------
# Cube

# (normal, u-axis, v-axis) for +X, -X, +Y, -Y, +Z, -Z
_CUBE_FACES = (
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((-1, 0, 0), (0, -1, 0), (0, 0, 1)),
    ((0, 1, 0), (-1, 0, 0), (0, 0, 1)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, -1), (1, 0, 0), (0, -1, 0)),
)


def build_cube_grid(e: int, lattice: str = "center") -> SamplingGrid:
    """Cube-map grid with an ``e x e`` lattice on each face.

    ``lattice="paper"`` spaces the lattice edge to edge, duplicating points
    along the cube edges (calibration only).
    """
    _check_lattice(lattice)
    if e < 1:
        raise ConfigurationError(f"cube edge must be >= 1, got {e}")
    if lattice == "center":
        t = 2.0 * (np.arange(e) + 0.5) / e - 1.0
    else:
        t = np.linspace(-1.0, 1.0, e) if e > 1 else np.zeros(1)
    uu, vv = np.meshgrid(t, t, indexing="ij")
    faces = []
    for normal, u_axis, v_axis in _CUBE_FACES:
        n, a, b = (np.asarray(x, dtype=np.float64) for x in (normal, u_axis, v_axis))
        faces.append(n + uu[..., None] * a + vv[..., None] * b)
    points = _freeze(np.concatenate([f.reshape(-1, 3) for f in faces]))
    return SamplingGrid(CUBE, points, 6, e * e, _with_lattice({"e": e}, lattice))


# ----------------------------------------------------------------------------
# Icosahedron


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Canonical unit icosahedron: (12, 3) vertices and (20, 3) outward-wound faces.

    Vertices are sorted lexicographically by (z, y, x); each face starts at
    its smallest vertex index and faces are sorted.
    """
    g = (1.0 + np.sqrt(5.0)) / 2.0
    raw = []
    for s1, s2 in itertools.product((-1.0, 1.0), repeat=2):
        raw += [(0.0, s1, s2 * g), (s1, s2 * g, 0.0), (s2 * g, 0.0, s1)]
    verts = np.array(raw)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    order = np.lexsort((verts[:, 0], verts[:, 1], verts[:, 2]))
    verts = verts[order]

    d = np.linalg.norm(verts[:, None] - verts[None], axis=-1)
    edge = d[d > 1e-9].min()
    adj = np.abs(d - edge) < 1e-9
    faces = []
    for i, j, k in itertools.combinations(range(12), 3):
        if adj[i, j] and adj[j, k] and adj[i, k]:
            a, b, c = verts[i], verts[j], verts[k]
            if np.dot(np.cross(b - a, c - a), a + b + c) < 0:
                j, k = k, j
            faces.append((i, j, k))
    faces = np.array(sorted(faces), dtype=np.int64)
    assert faces.shape == (20, 3)
    return verts, faces


def _subdivide(tri: np.ndarray, depth: int) -> np.ndarray:
    """Planar 4-way subdivision of ``(T, 3, 3)`` triangles, ``depth`` times.

    Children of (a, b, c) in order: corner-0 (a, ab, ca), corner-1 (ab, b, bc),
    corner-2 (ca, bc, c), center (bc, ca, ab). Output keeps every triangle's
    descendants contiguous.
    """
    for _ in range(depth):
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        kids = np.stack([
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([bc, ca, ab], axis=1),
        ], axis=1)  # (T, 4, 3, 3)
        tri = kids.reshape(-1, 3, 3)
    return tri


def build_icosa_grid(div: int, k: int = 0) -> SamplingGrid:
    """Subdivided icosahedron, one sample per sub-triangle centroid.

    ``20 * 4**div`` points grouped into ``20 * 4**k`` patches; each patch
    holds the descendants of one depth-``k`` sub-triangle.
    """
    if div < 0:
        raise ConfigurationError(f"div must be >= 0, got {div}")
    if not 0 <= k <= div:
        raise ConfigurationError(f"patch scale k={k} must lie in [0, div={div}]")
    verts, faces = icosahedron()
    tri = _subdivide(verts[faces], div)
    points = _freeze(tri.mean(axis=1))
    return SamplingGrid(ICOSA, points, 20 * 4 ** k, 4 ** (div - k),
                        {"div": div, "k": k})


# ----------------------------------------------------------------------------


def build_grid(method: str, **params) -> SamplingGrid:
    lattice = params.get("lattice", "center")
    if method == ERP:
        return build_erp_grid(params["H"], params["W"], params["P_h"], params["P_w"],
                              lattice)
    if method == CUBE:
        return build_cube_grid(params["e"], lattice)
    if method == ICOSA:
        return build_icosa_grid(params["div"], params.get("k", 0))
    raise ConfigurationError(f"unknown sampling method {method!r}")


def patch_view(grid: SamplingGrid) -> np.ndarray:
    """Points reshaped to ``(N, D, 3)``; a view, not a copy."""
    return grid.points.reshape(grid.num_patches, grid.patch_size, 3)


def grid_to_csv(grid: SamplingGrid) -> str:
    buf = io.StringIO()
    params = ";".join(f"{k}={v}" for k, v in grid.params.items())
    buf.write(f"# sphtr-grid v{GRID_CSV_VERSION} method={grid.method} {params}\n")
    buf.write("patch_index,slot_index,x,y,z\n")
    pv = patch_view(grid)
    for j in range(grid.num_patches):
        for s in range(grid.patch_size):
            x, y, z = pv[j, s]
            buf.write(f"{j},{s},{x:.17g},{y:.17g},{z:.17g}\n")
    return buf.getvalue()


def grid_from_csv(text: str) -> SamplingGrid:
    lines = text.splitlines()
    header = lines[0].split()
    if header[:2] != ["#", "sphtr-grid"] or header[2] != f"v{GRID_CSV_VERSION}":
        raise ValueError("not a sphtr grid CSV")
    method = header[3].split("=", 1)[1]
    params = {}
    if len(header) > 4:
        for kv in header[4].split(";"):
            key, val = kv.split("=")
            params[key] = val if key == "lattice" else int(val)
    rows = np.loadtxt(io.StringIO("\n".join(lines[2:])), delimiter=",", ndmin=2)
    n = int(rows[:, 0].max()) + 1
    d = int(rows[:, 1].max()) + 1
    return SamplingGrid(method, rows[:, 2:].copy(), n, d, params)
