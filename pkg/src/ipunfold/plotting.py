"""Report figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

FIGSIZE = (5.5, 3.4)


def _new_figure(nrows=1, ncols=1, figsize=FIGSIZE):
    fig = Figure(figsize=figsize, constrained_layout=True)
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=120, metadata={"Software": None})
    tmp.replace(path)


def plot_solve_trace(trace, path) -> None:
    """Objective value and distance to the box along the iterations."""
    it = np.array([r[0] for r in trace])
    obj = np.array([r[1] for r in trace])
    margin = np.array([r[2] for r in trace])
    fig, ax = _new_figure(1, 2, figsize=(8, 3.2))
    ax[0, 0].plot(it, obj, lw=1.2)
    ax[0, 0].set_xlabel("iteration")
    ax[0, 0].set_ylabel("objective")
    ax[0, 1].semilogy(it, np.maximum(margin, np.finfo(float).tiny), lw=1.2,
                      color="tab:orange")
    ax[0, 1].set_xlabel("iteration")
    ax[0, 1].set_ylabel("min margin to bounds")
    _save(fig, path)


def plot_training(rows, path) -> None:
    """Mean train SSIM per epoch, one curve per layer, plus the end-of-layer
    values."""
    rows = list(rows)
    layers = sorted({r[0] for r in rows})
    fig, ax = _new_figure(1, 2, figsize=(9, 3.4))
    finals = []
    for k in layers:
        sub = [r for r in rows if r[0] == k]
        ax[0, 0].plot([r[1] for r in sub], [r[2] for r in sub], lw=1,
                      label=f"layer {k}")
        finals.append(sub[-1][2])
    ax[0, 0].set_xlabel("epoch")
    ax[0, 0].set_ylabel("mean train SSIM")
    if len(layers) <= 10:
        ax[0, 0].legend(fontsize=6, ncol=2)
    ax[0, 1].plot(layers, finals, marker="o", lw=1.2)
    ax[0, 1].set_xlabel("layer")
    ax[0, 1].set_ylabel("SSIM after training")
    ax[0, 1].xaxis.set_major_locator(MaxNLocator(integer=True))
    _save(fig, path)


def plot_layer_parameters(path_rows, path) -> None:
    """Per-layer (gamma, mu, lambda), averaged over the processed images.

    ``path_rows`` is a list of per-image lists of ``(gamma, mu, lambda)``.
    """
    arr = np.asarray(path_rows, dtype=np.float64)
    if arr.size == 0:
        arr = np.zeros((1, 0, 3))
    mean = arr.mean(axis=0)
    k = np.arange(mean.shape[0])
    fig, ax = _new_figure(1, 3, figsize=(10, 3.0))
    for j, name in enumerate(("gamma", "mu", "lambda")):
        ax[0, j].plot(k, mean[:, j], marker="o", lw=1.2)
        ax[0, j].set_yscale("log")
        ax[0, j].set_xlabel("layer")
        ax[0, j].set_title(name)
    _save(fig, path)


def plot_grid_search(scores, path) -> None:
    pts = [(lam, s) for lam, s in scores if s is not None]
    fig, ax = _new_figure()
    if pts:
        lam, s = zip(*pts)
        ax[0, 0].semilogx(lam, s, marker="o", lw=1.2)
    ax[0, 0].set_xlabel("lambda")
    ax[0, 0].set_ylabel("SSIM")
    _save(fig, path)
