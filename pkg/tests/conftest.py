from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from sphtr.data.sources import DATA_ROOT_ENV, MNIST_FILES


def _has_mnist(root: Path) -> bool:
    return all((root / f).exists() or (root / (f + ".gz")).exists()
               for pair in MNIST_FILES.values() for f in pair)


@pytest.fixture(scope="session")
def mnist_root() -> Path:
    root = Path(os.environ.get(DATA_ROOT_ENV, "data"))
    if not _has_mnist(root):
        pytest.skip(f"MNIST IDX files not found under ${DATA_ROOT_ENV}={root}")
    return root


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(num: np.ndarray, ana: np.ndarray, floor: float = 1e-6) -> float:
    """Max abs difference over the larger of the two magnitudes (floored)."""
    scale = max(np.abs(num).max(), np.abs(ana).max(), floor)
    return float(np.abs(num - ana).max() / scale)


@pytest.fixture(scope="session")
def synth_cifar_root(tmp_path_factory) -> Path:
    from sphtr.data.sources import write_synth_cifar
    return write_synth_cifar(tmp_path_factory.mktemp("cifar"), n_train=400, n_test=200, seed=0)


ACCEPTANCE: list[str] = []


def verdict(criterion: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if ``ok`` is false."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def note(criterion: int, detail: str) -> None:
    """Record an informational line shown with the acceptance summary."""
    line = f"criterion {criterion:2d}: INFO  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
