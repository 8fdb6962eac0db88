"""Proper rotation groups of the cube and icosahedron, and the permutations
they induce on symmetric sampling grids."""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .sampling import CUBE, ICOSA, SamplingGrid, icosahedron

MATCH_TOL = 1e-9  # radians
DEDUP_TOL = 1e-8


class GroupError(RuntimeError):
    """Closure failed; a generator is not a symmetry of the solid."""


class GeometryError(RuntimeError):
    """A rotation does not map the grid onto itself."""


@dataclass(frozen=True)
class RotationElement:
    matrix: np.ndarray
    id: int = -1

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def inverse_matrix(self) -> np.ndarray:
        return self.matrix.T


@dataclass(frozen=True)
class PermutationPair:
    patch_perm: np.ndarray  # sigma: patch j moves to sigma[j]
    point_perm: np.ndarray  # rho: point m moves to rho[m]
    within_patch_aligned: bool
    max_error: float = 0.0


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def generators(solid: str) -> tuple[np.ndarray, np.ndarray]:
    if solid == ICOSA:
        verts, faces = icosahedron()
        return (axis_angle(verts[0], 2 * np.pi / 5),
                axis_angle(verts[faces[0]].mean(axis=0), 2 * np.pi / 3))
    if solid == CUBE:
        return axis_angle((0, 0, 1), np.pi / 2), axis_angle((1, 1, 1), 2 * np.pi / 3)
    raise ValueError(f"no symmetry group for {solid!r}")


def _sort_key(m: np.ndarray):
    return tuple(np.round(m.ravel(), 9) + 0.0)


def close_group(gens, max_size: int = 1000) -> list[np.ndarray]:
    """Breadth-first closure of ``gens`` under matrix product."""
    elems = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        nxt = []
        for a in frontier:
            for g in gens:
                c = g @ a
                if not any(np.abs(c - e).max() < DEDUP_TOL for e in elems):
                    elems.append(c)
                    nxt.append(c)
                    if len(elems) > max_size:
                        raise GroupError(f"closure exceeded {max_size} elements")
        frontier = nxt
    return elems


@lru_cache(maxsize=None)
def _enumerate(solid: str) -> tuple[RotationElement, ...]:
    mats = sorted(close_group(generators(solid)), key=_sort_key)
    return tuple(RotationElement(m, i) for i, m in enumerate(mats))


def enumerate_group(solid: str) -> list[RotationElement]:
    """All proper rotations of the solid, ids assigned by sorted flattened matrix."""
    return list(_enumerate(solid))


def identity_id(solid: str) -> int:
    for r in _enumerate(solid):
        if np.abs(r.matrix - np.eye(3)).max() < DEDUP_TOL:
            return r.id
    raise GroupError("identity missing")


def find_element(solid: str, matrix: np.ndarray) -> int:
    """Id of the group element equal to ``matrix``, or -1."""
    for r in _enumerate(solid):
        if np.abs(r.matrix - matrix).max() < DEDUP_TOL:
            return r.id
    return -1


def check_axioms(elements: list[RotationElement], tol: float = DEDUP_TOL) -> None:
    """Raise GroupError unless ``elements`` is a group of proper rotations."""
    mats = np.stack([r.matrix for r in elements])
    flat = mats.reshape(len(mats), -1)

    def member(m):
        return np.abs(flat - m.ravel()).max(axis=1).min() < tol

    for m in mats:
        if np.abs(m.T @ m - np.eye(3)).max() > 1e-10 or abs(np.linalg.det(m) - 1) > 1e-10:
            raise GroupError("element is not a proper rotation")
        if not member(m.T):
            raise GroupError("inverse missing")
    if not member(np.eye(3)):
        raise GroupError("identity missing")
    prods = np.einsum("aij,bjk->abik", mats, mats).reshape(-1, 9)
    d = np.abs(prods[:, None, :] - flat[None]).max(axis=2).min(axis=1)
    if d.max() >= tol:
        raise GroupError(f"not closed, worst product off by {d.max():.3g}")


def _chord_to_angle(chord):
    return 2.0 * np.arcsin(np.clip(np.asarray(chord) / 2.0, 0.0, 1.0))


def rotation_to_permutation(R: RotationElement | np.ndarray,
                            grid: SamplingGrid) -> PermutationPair:
    """Nearest-point matching of the rotated grid onto itself."""
    mat = R.matrix if isinstance(R, RotationElement) else np.asarray(R)
    if grid.symmetry is None and not np.allclose(mat, np.eye(3), atol=1e-12):
        raise GeometryError(f"{grid.method} grid has no rotation symmetry")
    rotated = grid.points @ mat.T
    dist, rho = _tree(grid).query(rotated)
    err = float(_chord_to_angle(dist).max())
    if err > MATCH_TOL:
        raise GeometryError(
            f"rotated point is {err:.3g} rad from the nearest grid point")
    if np.bincount(rho, minlength=grid.num_points).max() != 1:
        raise GeometryError("point matching is not a bijection")
    D = grid.patch_size
    blocks = rho.reshape(grid.num_patches, D) // D
    if np.any(blocks != blocks[:, :1]):
        raise GeometryError("rotation splits a patch across several patches")
    sigma = blocks[:, 0].copy()
    aligned = bool(np.all(rho == (sigma[:, None] * D + np.arange(D)).ravel()))
    return PermutationPair(sigma, rho, aligned, err)


_TREES: dict = {}


def _tree(grid: SamplingGrid) -> cKDTree:
    key = (grid.method, tuple(sorted(grid.params.items())))
    tree = _TREES.get(key)
    if tree is None or tree.n != grid.num_points:
        tree = _TREES[key] = cKDTree(grid.points)
    return tree


def random_so3(rng: np.random.Generator) -> RotationElement:
    """Haar-uniform rotation from a uniform unit quaternion."""
    q = rng.standard_normal(4)
    while (n := np.linalg.norm(q)) < 1e-12:
        q = rng.standard_normal(4)
    w, x, y, z = q / n
    m = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return RotationElement(m)


def permute_rows(values: np.ndarray, perm: np.ndarray, axis: int = 0) -> np.ndarray:
    """Move entry ``i`` along ``axis`` to position ``perm[i]``."""
    out = np.empty_like(values)
    idx = [slice(None)] * values.ndim
    idx[axis] = perm
    out[tuple(idx)] = values
    return out


def compose(p_outer: np.ndarray, p_inner: np.ndarray) -> np.ndarray:
    """(p_outer o p_inner)[i] = p_outer[p_inner[i]]."""
    return p_outer[p_inner]


def permutation_table_csv(grid: SamplingGrid, elements: list[RotationElement]) -> str:
    buf = io.StringIO()
    buf.write("rotation_id,patch_index,image_patch_index\n")
    for r in elements:
        sigma = rotation_to_permutation(r, grid).patch_perm
        for j, t in enumerate(sigma):
            buf.write(f"{r.id},{j},{t}\n")
    return buf.getvalue()


def group_metadata_csv(elements: list[RotationElement]) -> str:
    buf = io.StringIO()
    buf.write("rotation_id,angle_deg,axis_x,axis_y,axis_z,"
              "m00,m01,m02,m10,m11,m12,m20,m21,m22\n")
    for r in elements:
        m = r.matrix
        angle = np.degrees(np.arccos(np.clip((np.trace(m) - 1) / 2, -1, 1)))
        axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        if np.linalg.norm(axis) < 1e-9:
            if angle < 90:
                axis = np.zeros(3)
            else:  # half-turn: axis from the symmetric part
                w, v = np.linalg.eigh((m + np.eye(3)) / 2)
                axis = v[:, np.argmax(w)]
                axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
        else:
            axis = axis / np.linalg.norm(axis)
        vals = [f"{angle:.6f}"] + [f"{a:.9f}" for a in axis + 0.0] + [
            f"{x:.12f}" for x in m.ravel() + 0.0]
        buf.write(f"{r.id}," + ",".join(vals) + "\n")
    return buf.getvalue()
