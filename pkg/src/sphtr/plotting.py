"""Figures rendered next to the CSV outputs.

Uses the non-interactive Agg backend; PNG metadata is stripped so repeated
runs write identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "svg.hashsalt": "sphtr",
}


def _new(width: float = 4.5, height: float = 3.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def uniformity_traces(traces: dict, path) -> Path:
    """``traces`` maps a label to a running-mean sequence."""
    fig, ax = _new()
    for label, trace in traces.items():
        trace = np.asarray(trace)
        ax.plot(np.arange(1, len(trace) + 1), trace, label=label, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("uniformity (running mean)")
    ax.legend(frameon=False)
    return save(fig, path)


def equivariance_sweep(x: Sequence, series: dict, xlabel: str, path) -> Path:
    """One line per label; y is the aggregate equivariance error on a log axis."""
    fig, ax = _new()
    for label, ys in series.items():
        ys = np.maximum(np.asarray(ys, dtype=np.float64), 1e-18)
        ax.semilogy(list(x), ys, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("equivariance error")
    ax.legend(frameon=False)
    return save(fig, path)


def learning_curves(curves: dict, path, key: str = "test_acc") -> Path:
    """``curves`` maps a label to a list of per-epoch dicts or records."""
    fig, ax = _new()
    for label, hist in curves.items():
        epochs = [getattr(r, "epoch", None) or r["epoch"] for r in hist]
        ys = [getattr(r, key) if hasattr(r, key) else r[key] for r in hist]
        ax.plot(epochs, ys, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key.replace("_", " "))
    ax.legend(frameon=False)
    return save(fig, path)


def bars(labels: Sequence[str], values: Sequence[float], ylabel: str, path) -> Path:
    fig, ax = _new()
    ax.bar(range(len(values)), values, color="0.4", width=0.6)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(list(labels))
    ax.set_ylabel(ylabel)
    return save(fig, path)
