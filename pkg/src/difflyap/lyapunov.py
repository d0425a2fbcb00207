"""Composite candidate V = V_b o Phi: values, chain-rule gradients, risk,
violation metrics and grid export."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .base_functions import BaseFunction, base_grad, base_value
from .diffeo_net import DiffeoNet, net_forward, net_forward_jacobian

DEFAULT_EXCLUSION_RADIUS = 1e-3
DEFAULT_HINGE_MARGIN = 0.01


@dataclass(frozen=True)
class LyapunovCandidate:
    base: BaseFunction
    net: DiffeoNet

    def __post_init__(self):
        if self.base.kind == "multi_point" and self.base.attractors.shape[1] != self.net.dim:
            raise ValueError("base attractors and net have different dimensions")
        for t, layer in enumerate(self.net.layers):
            layer.check_constraint(t)


@dataclass(frozen=True)
class ViolationReport:
    total_points: int
    violating_points: int
    excluded_points: int
    violation_rate: float
    margin_min: float
    margin_mean: float
    margin_max: float

    def to_dict(self) -> dict:
        return {
            "total_points": self.total_points,
            "violating_points": self.violating_points,
            "excluded_points": self.excluded_points,
            "violation_rate": self.violation_rate,
            "margin_stats": {"min": self.margin_min, "mean": self.margin_mean,
                             "max": self.margin_max},
        }

    def __str__(self) -> str:
        return (f"violation rate {self.violation_rate:.2f}% "
                f"({self.violating_points}/{self.total_points - self.excluded_points} points, "
                f"{self.excluded_points} excluded); dV/dt min {self.margin_min:.4g} "
                f"mean {self.margin_mean:.4g} max {self.margin_max:.4g}")


def lyap_value(cand: LyapunovCandidate, x):
    return base_value(cand.base, net_forward(cand.net, x))


def lyap_grad(cand: LyapunovCandidate, x) -> np.ndarray:
    """grad V(x) = J_Phi(x)^T grad V_b(Phi(x))."""
    z, J = net_forward_jacobian(cand.net, x)
    g = base_grad(cand.base, z)
    if np.ndim(x) == 1:
        return J.T @ g
    return np.einsum("mji,mj->mi", J, g)


def directional_derivative(cand: LyapunovCandidate, x, xdot):
    g = lyap_grad(cand, x)
    xdot = np.asarray(xdot, dtype=float)
    if g.ndim == 1:
        return float(g @ xdot)
    return np.einsum("mi,mi->m", g, np.atleast_2d(xdot))


def pointwise_risk(vdot: np.ndarray, speed: np.ndarray, on_attractor: np.ndarray,
                   mode: str = "hinge", hinge_margin: float = DEFAULT_HINGE_MARGIN) -> np.ndarray:
    """Per-sample risk terms and the helper used by the trainer."""
    if mode == "raw":
        terms = vdot.copy()
    elif mode == "hinge":
        terms = np.maximum(0.0, vdot + hinge_margin * speed)
    else:
        raise ValueError(f"unknown risk mode {mode!r}")
    return np.where(on_attractor, np.abs(vdot), terms)


def risk_derivative(vdot: np.ndarray, speed: np.ndarray, on_attractor: np.ndarray,
                    mode: str = "hinge", hinge_margin: float = DEFAULT_HINGE_MARGIN) -> np.ndarray:
    """d(term_i)/d(vdot_i) matching :func:`pointwise_risk`."""
    if mode == "raw":
        d = np.ones_like(vdot)
    elif mode == "hinge":
        d = (vdot + hinge_margin * speed > 0).astype(float)
    else:
        raise ValueError(f"unknown risk mode {mode!r}")
    return np.where(on_attractor, np.sign(vdot), d)


def lyapunov_risk(cand: LyapunovCandidate, data, mode: str = "hinge",
                  hinge_margin: float = DEFAULT_HINGE_MARGIN) -> float:
    """Empirical Lyapunov risk over a :class:`~difflyap.data.TrajectoryDataset`.

    ``raw`` sums the directional derivatives; ``hinge`` sums
    ``max(0, dV + margin*|xdot|)``.  Samples on the attractor set contribute
    ``|dV|`` in both modes.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    vdot = directional_derivative(cand, data.x, data.xdot)
    speed = np.linalg.norm(data.xdot, axis=1)
    terms = pointwise_risk(vdot, speed, data.attractor, mode, hinge_margin)
    # fixed left-to-right order keeps the sum reproducible
    return float(np.add.reduce(terms))


def excluded_mask(base: BaseFunction, x: np.ndarray, attractor_flags: np.ndarray,
                  exclusion_radius: float) -> np.ndarray:
    return attractor_flags | (base.distance_to_attractor(x) <= exclusion_radius)


def violation_rate(cand: LyapunovCandidate, data,
                   exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS,
                   return_vdot: bool = False):
    """Percentage of non-excluded samples where dV/dt >= 0.

    Samples flagged as attractor points and samples within
    ``exclusion_radius`` of the base attractor set are excluded.
    """
    if exclusion_radius < 0:
        raise ValueError("exclusion_radius must be non-negative")
    if len(data) == 0:
        raise ValueError("empty dataset")
    vdot = directional_derivative(cand, data.x, data.xdot)
    report = report_from_vdot(vdot, excluded_mask(cand.base, data.x, data.attractor,
                                                  exclusion_radius))
    return (report, vdot) if return_vdot else report


def report_from_vdot(vdot: np.ndarray, excluded: np.ndarray) -> ViolationReport:
    kept = vdot[~excluded]
    total = int(vdot.size)
    n_kept = int(kept.size)
    bad = int(np.count_nonzero(kept >= 0))
    rate = 100.0 * bad / n_kept if n_kept else 0.0
    if n_kept:
        stats = (float(kept.min()), float(np.add.reduce(kept) / n_kept), float(kept.max()))
    else:
        stats = (float("nan"),) * 3
    return ViolationReport(total, bad, total - n_kept, rate, *stats)


# -- grid export --------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    points: np.ndarray
    value: np.ndarray
    gradnorm: np.ndarray
    vdot: np.ndarray | None = None

    def reshaped(self, name: str) -> np.ndarray:
        """Scalar field as an array indexed ``[i0, i1, ...]`` along the axes."""
        return getattr(self, name).reshape(tuple(reversed(self.resolution))).T

    def axis(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        return np.linspace(lo, hi, self.resolution[k])


def grid_points(bounds, resolution) -> np.ndarray:
    """Row-major node list with axis 0 varying fastest."""
    bounds = [tuple(map(float, b)) for b in bounds]
    resolution = [int(r) for r in resolution]
    if len(bounds) != len(resolution):
        raise ValueError("bounds and resolution have different lengths")
    for (lo, hi), r in zip(bounds, resolution):
        if not lo < hi:
            raise ValueError(f"grid bound lo={lo} must be below hi={hi}")
        if r < 2:
            raise ValueError(f"grid resolution {r} must be at least 2")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, resolution)]
    mesh = np.meshgrid(*reversed(axes), indexing="ij")
    return np.stack(list(reversed([m.ravel() for m in mesh])), axis=1)


def evaluate_grid(cand: LyapunovCandidate, bounds, resolution,
                  field: Callable[[np.ndarray], np.ndarray] | None = None) -> Grid:
    pts = grid_points(bounds, resolution)
    z, J = net_forward_jacobian(cand.net, pts)
    value = base_value(cand.base, z)
    grad = np.einsum("mji,mj->mi", J, base_grad(cand.base, z))
    vdot = np.einsum("mi,mi->m", grad, field(pts)) if field is not None else None
    return Grid(tuple(tuple(map(float, b)) for b in bounds), tuple(int(r) for r in resolution),
                pts, value, np.linalg.norm(grad, axis=1), vdot)


def export_grid(cand: LyapunovCandidate, bounds, resolution, path,
                field: Callable[[np.ndarray], np.ndarray] | None = None) -> Grid:
    """Write the grid table: ``#``-prefixed JSON metadata line, a header row
    and one comma-separated row per node (axis 0 fastest)."""
    grid = evaluate_grid(cand, bounds, resolution, field)
    write_grid(grid, path)
    return grid


def write_grid(grid: Grid, path) -> None:
    n = grid.points.shape[1]
    cols = [f"x{k + 1}" for k in range(n)] + ["V", "gradnorm"]
    data = [grid.points, grid.value[:, None], grid.gradnorm[:, None]]
    if grid.vdot is not None:
        cols.append("Vdot")
        data.append(grid.vdot[:, None])
    table = np.hstack(data)
    meta = {"bounds": [list(b) for b in grid.bounds], "resolution": list(grid.resolution)}
    lines = ["# " + json.dumps(meta), ",".join(cols)]
    lines += [",".join(format(v, ".17g") for v in row) for row in table]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_grid(path) -> Grid:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing grid metadata line")
    meta = json.loads(text[0][1:])
    cols = text[1].split(",")
    n = len(meta["bounds"])
    table = np.array([[float(v) for v in line.split(",")] for line in text[2:] if line],
                     dtype=float).reshape(-1, len(cols))
    vdot = table[:, cols.index("Vdot")] if "Vdot" in cols else None
    return Grid(tuple(tuple(b) for b in meta["bounds"]), tuple(meta["resolution"]),
                table[:, :n], table[:, n], table[:, n + 1], vdot)
