"""Deterministic SVG figures (fixed hash salt, no date metadata)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SVG_META = {"Date": None, "Creator": "distdrift"}


def _setup():
    plt.rcParams["svg.hashsalt"] = "distdrift"
    plt.rcParams["svg.fonttype"] = "path"


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_h_sigma0(grid, h, sigma0, path) -> None:
    _setup()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(grid, h, lw=1.2)
    a1.plot(grid, grid, lw=0.6, ls="--", color="0.5")
    a1.set_xlabel("x")
    a1.set_ylabel("h(x)")
    a2.plot(h, sigma0, lw=1.0)
    a2.set_xlabel("y")
    a2.set_ylabel(r"$\sigma_0(y)$")
    fig.tight_layout()
    _save(fig, path)


def plot_paths(times, x_paths, path, n_show: int = 20) -> None:
    if x_paths.size == 0:
        raise ValueError("empty ensemble")
    _setup()
    fig, ax = plt.subplots(figsize=(7, 4))
    for row in x_paths[:n_show]:
        ax.plot(times, row, lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("X")
    fig.tight_layout()
    _save(fig, path)


def plot_qv_refinement(levels, errors, path) -> None:
    _setup()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(levels, errors, "o-")
    ax.set_xlabel(r"$\log_2$ steps")
    ax.set_ylabel("mean relative QV error")
    fig.tight_layout()
    _save(fig, path)


def plot_marginals(samples: dict, path, bins: int = 60) -> None:
    """``samples`` maps a label to (values, weights)."""
    if not samples or any(np.asarray(v).size == 0 for v, _ in samples.values()):
        raise ValueError("empty ensemble")
    _setup()
    allv = np.concatenate([np.asarray(v) for v, _ in samples.values()])
    edges = np.linspace(allv.min(), allv.max(), bins + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (v, w) in samples.items():
        ax.hist(v, bins=edges, weights=w, density=True, histtype="step", lw=1.2, label=label)
    ax.set_xlabel(r"$X_T$")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
