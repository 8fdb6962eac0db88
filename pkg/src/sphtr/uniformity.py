"""Monte-Carlo uniformity of a spherical point set.

Unif(P) averages the inverse Hausdorff distance between P and independent
uniform samples of the sphere; larger values mean a more even covering.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .sampling import SamplingGrid

_CHUNK = 512


@dataclass
class UniformityReport:
    method: str
    params: dict
    n_iterations: int
    reference_set_size: int
    values: list = field(default_factory=list)
    running_mean: list = field(default_factory=list)
    seed: int = 0

    @property
    def final_value(self) -> float:
        return float(np.mean(self.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,value,running_mean\n")
        for i, (v, r) in enumerate(zip(self.values, self.running_mean), start=1):
            buf.write(f"{i},{v:.17g},{r:.17g}\n")
        return buf.getvalue()


def sample_uniform_sphere(m: int, rng: np.random.Generator | int) -> np.ndarray:
    """``m`` points uniform on the unit sphere from normalised Gaussian draws."""
    if m < 1:
        raise ValueError(f"need at least one point, got m={m}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x = rng.standard_normal((m, 3))
    norms = np.linalg.norm(x, axis=1)
    while np.any(bad := norms < 1e-300):
        x[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(x, axis=1)
    return x / norms[:, None]


def _directed_sq(X: np.ndarray, Y: np.ndarray) -> float:
    """max over x of min over y of squared Euclidean distance, exhaustive."""
    worst = 0.0
    yx, yy, yz = Y[:, 0], Y[:, 1], Y[:, 2]
    for start in range(0, len(X), _CHUNK):
        xs = X[start:start + _CHUNK]
        dx = xs[:, 0:1] - yx
        dy = xs[:, 1:2] - yy
        dz = xs[:, 2:3] - yz
        d2 = dx * dx + dy * dy + dz * dz
        worst = max(worst, float(d2.min(axis=1).max()))
    return worst


def _directed_sq_tree(X: np.ndarray, Y: np.ndarray, tree: cKDTree) -> float:
    """Same quantity as :func:`_directed_sq`; the tree only picks the neighbour,
    the distance is recomputed with the exhaustive arithmetic."""
    _, idx = tree.query(X)
    d = X - Y[idx]
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    return float(d2.max())


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    if len(X) == 0:
        raise ValueError("Hausdorff distance of an empty set is undefined")
    return X


def hausdorff_distance_exhaustive(X, Y) -> float:
    """Symmetric Hausdorff distance under the Euclidean metric of R^3, O(|X||Y|)."""
    X, Y = _as_points(X), _as_points(Y)
    return float(np.sqrt(max(_directed_sq(X, Y), _directed_sq(Y, X))))


def hausdorff_distance(X, Y, tree_y: Optional[cKDTree] = None) -> float:
    """KD-tree accelerated Hausdorff distance, equal to the exhaustive value.

    ``tree_y`` may carry a prebuilt tree over ``Y`` for repeated queries.
    """
    X, Y = _as_points(X), _as_points(Y)
    tree_y = tree_y if tree_y is not None else cKDTree(Y)
    return float(np.sqrt(max(_directed_sq_tree(X, Y, tree_y),
                             _directed_sq_tree(Y, X, cKDTree(X)))))


def iteration_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def uniformity(grid: SamplingGrid | np.ndarray, n: int = 100, m: Optional[int] = None,
               seed: int = 0,
               sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None,
               workers: int = 1) -> UniformityReport:
    """Estimate Unif(P) from ``n`` reference sets of ``m`` uniform points.

    ``m`` defaults to the size of the point set. ``sampler(m, rng)`` replaces
    the uniform reference draw (used for common-random-number comparisons).
    Each iteration gets its own sub-seed, so the result does not depend on
    ``workers``.
    """
    if isinstance(grid, SamplingGrid):
        points, method, params = grid.points, grid.method, dict(grid.params)
    else:
        points, method, params = np.asarray(grid, dtype=np.float64), "points", {}
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = len(points) if m is None else m
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    draw = sampler or sample_uniform_sphere
    tree = cKDTree(points)

    def one(ss):
        X = draw(m, np.random.default_rng(ss))
        return 1.0 / hausdorff_distance(X, points, tree)

    seeds = iteration_seeds(seed, n)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(one, seeds))
    else:
        values = [one(ss) for ss in seeds]
    running = np.cumsum(values) / np.arange(1, n + 1)
    return UniformityReport(method, params, n, m, [float(v) for v in values],
                            [float(r) for r in running], seed)
