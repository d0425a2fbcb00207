"""Static matplotlib renderings of grids, datasets and training logs.

Figures are built on an explicit Agg canvas so nothing depends on the
interactive backend or on pyplot's global state.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .lyapunov import Grid

RC = {"figsize": (5.0, 4.2), "dpi": 120}


def _new_figure(ncols: int = 1) -> tuple[Figure, list]:
    w, h = RC["figsize"]
    fig = Figure(figsize=(w * ncols, h), dpi=RC["dpi"], layout="constrained")
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(1, ncols, k + 1) for k in range(ncols)]
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    return path


def plot_grid(grid: Grid, path, data=None, vdot=None, title: str = "", levels: int = 25) -> Path:
    """Contour plot of V over a 2-D grid, optionally with trajectories.

    Sample points are coloured by the sign of ``vdot`` when it is given
    (green for decrease, red for violation).
    """
    if grid.points.shape[1] != 2:
        raise ValueError("contour plots need a 2-D grid")
    fig, (ax,) = _new_figure()
    X, Y = np.meshgrid(grid.axis(0), grid.axis(1), indexing="ij")
    V = grid.reshaped("value")
    cs = ax.contourf(X, Y, np.log10(V + 1e-12 * max(V.max(), 1.0)), levels=levels, cmap="viridis")
    ax.contour(X, Y, V, levels=levels, colors="k", linewidths=0.3)
    fig.colorbar(cs, ax=ax, label="log10 V")
    if data is not None:
        for k in data.trajectory_ids:
            xs = data.x[data.traj_id == k]
            ax.plot(xs[:, 0], xs[:, 1], color="k", lw=0.8)
        if vdot is not None:
            bad = vdot >= 0
            ax.scatter(data.x[~bad, 0], data.x[~bad, 1], s=3, color="tab:green", zorder=3)
            ax.scatter(data.x[bad, 0], data.x[bad, 1], s=6, color="tab:red", zorder=4)
    ax.set_xlim(*grid.bounds[0])
    ax.set_ylim(*grid.bounds[1])
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_dataset(data, path, title: str = "") -> Path:
    """Trajectories of a 2-D dataset with attractor samples marked."""
    if data.dim != 2:
        raise ValueError("dataset plots need 2-D states")
    fig, (ax,) = _new_figure()
    for k in data.trajectory_ids:
        xs = data.x[data.traj_id == k]
        ax.plot(xs[:, 0], xs[:, 1], lw=0.8)
    att = data.x[data.attractor]
    if len(att):
        ax.scatter(att[:, 0], att[:, 1], s=12, color="tab:blue", zorder=3)
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_training_log(log: list[dict], path) -> Path:
    """Risk and violation rate against iteration."""
    fig, (ax1, ax2) = _new_figure(2)
    it = [e["iteration"] for e in log]
    ax1.semilogy(it, [max(e["risk"], 1e-16) for e in log])
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("training risk")
    ax2.plot(it, [e["violation_rate"] for e in log])
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("violation rate [%]")
    return _save(fig, path)
