"""Topology-encoding base functions V_b with analytic value, gradient and
Hessian-vector product.

* ``point_attractor``:  V = c x^T x
* ``multi_point``:      V = -(1/beta) log sum_i exp(-beta |x - a_i|^2), shifted
  so that the smallest value over the attractors is 0
* ``limit_cycle_ring``: V = c (|x|^2 - r^2)^2
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import logsumexp

Kind = Literal["point_attractor", "multi_point", "limit_cycle_ring"]
KINDS = ("point_attractor", "multi_point", "limit_cycle_ring")


@dataclass(frozen=True)
class BaseFunction:
    kind: Kind
    scale: float = 0.1
    attractors: np.ndarray | None = None
    beta: float = 10.0
    radius: float = 1.0
    _shift: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown base function kind {self.kind!r}")
        if self.kind == "multi_point":
            if self.attractors is None:
                raise ValueError("multi_point needs attractor points")
            a = np.array(self.attractors, dtype=float)
            if a.ndim != 2 or a.shape[0] < 1:
                raise ValueError("attractors must have shape (m, n)")
            if self.beta <= 0:
                raise ValueError("beta must be positive")
            a.setflags(write=False)
            object.__setattr__(self, "attractors", a)
            object.__setattr__(self, "_shift", float(np.min(self._softmin(a))))
        else:
            if self.scale <= 0:
                raise ValueError("scale must be positive")
            if self.kind == "limit_cycle_ring" and self.radius <= 0:
                raise ValueError("radius must be positive")

    @classmethod
    def point(cls, scale: float = 0.1) -> "BaseFunction":
        return cls("point_attractor", scale=scale)

    @classmethod
    def multi(cls, attractors, beta: float = 10.0) -> "BaseFunction":
        return cls("multi_point", attractors=attractors, beta=beta)

    @classmethod
    def ring(cls, radius: float, scale: float = 1.0) -> "BaseFunction":
        return cls("limit_cycle_ring", scale=scale, radius=radius)

    def to_dict(self) -> dict:
        if self.kind == "point_attractor":
            return {"kind": self.kind, "scale": self.scale}
        if self.kind == "multi_point":
            return {"kind": self.kind, "attractors": self.attractors.tolist(),
                    "beta": self.beta}
        return {"kind": self.kind, "scale": self.scale, "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "BaseFunction":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, **d)

    def _softmin(self, xs: np.ndarray) -> np.ndarray:
        q = np.sum((xs[:, None, :] - self.attractors[None]) ** 2, axis=-1)
        return -logsumexp(-self.beta * q, axis=1) / self.beta

    def _softmin_weights(self, xs: np.ndarray):
        d = xs[:, None, :] - self.attractors[None]
        q = np.sum(d ** 2, axis=-1)
        logits = -self.beta * q
        w = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        return w, 2.0 * d  # weights (M, m), per-well gradients (M, m, n)

    def distance_to_attractor(self, x) -> np.ndarray:
        """Euclidean distance of each point to this function's attractor set."""
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "point_attractor":
            out = np.linalg.norm(xs, axis=1)
        elif self.kind == "multi_point":
            out = np.min(np.linalg.norm(xs[:, None, :] - self.attractors[None], axis=-1), axis=1)
        else:
            out = np.abs(np.linalg.norm(xs, axis=1) - self.radius)
        return out[0] if np.ndim(x) == 1 else out


def _points(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_2d(arr), arr.ndim == 1


def base_value(b: BaseFunction, x) -> np.ndarray | float:
    xs, single = _points(x)
    if b.kind == "point_attractor":
        v = b.scale * np.sum(xs * xs, axis=1)
    elif b.kind == "multi_point":
        v = b._softmin(xs) - b._shift
    else:
        v = b.scale * (np.sum(xs * xs, axis=1) - b.radius ** 2) ** 2
    return float(v[0]) if single else v


def base_grad(b: BaseFunction, x) -> np.ndarray:
    xs, single = _points(x)
    if b.kind == "point_attractor":
        g = 2.0 * b.scale * xs
    elif b.kind == "multi_point":
        w, gi = b._softmin_weights(xs)
        g = np.einsum("mk,mki->mi", w, gi)
    else:
        s = np.sum(xs * xs, axis=1) - b.radius ** 2
        g = 4.0 * b.scale * s[:, None] * xs
    return g[0] if single else g


def base_hvp(b: BaseFunction, x, v) -> np.ndarray:
    """Hessian of V_b at x applied to v (row-wise for batches)."""
    xs, single = _points(x)
    vs = np.atleast_2d(np.asarray(v, dtype=float))
    if b.kind == "point_attractor":
        h = 2.0 * b.scale * vs
    elif b.kind == "multi_point":
        w, gi = b._softmin_weights(xs)
        gbar = np.einsum("mk,mki->mi", w, gi)
        gv = np.einsum("mki,mi->mk", gi, vs)
        second = np.einsum("mk,mki,mk->mi", w, gi, gv)
        h = 2.0 * vs - b.beta * (second - gbar * np.sum(gbar * vs, axis=1, keepdims=True))
    else:
        s = np.sum(xs * xs, axis=1) - b.radius ** 2
        xv = np.sum(xs * vs, axis=1)
        h = 4.0 * b.scale * (2.0 * xs * xv[:, None] + s[:, None] * vs)
    return h[0] if single else h


def degenerate_points(b: BaseFunction, bounds, resolution: int = 201) -> np.ndarray:
    """Points off the attractor set where the gradient vanishes.

    ``limit_cycle_ring``: the origin.  ``multi_point``: local maxima / saddles
    of the soft-min, located by Newton refinement of grid points on the ridge.
    ``point_attractor``: none.
    """
    if b.kind == "point_attractor":
        return np.zeros((0, len(bounds)))
    if b.kind == "limit_cycle_ring":
        return np.zeros((1, len(bounds)))
    lo = np.array([lohi[0] for lohi in bounds], float)
    hi = np.array([lohi[1] for lohi in bounds], float)
    axes = [np.linspace(l, h, resolution) for l, h in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    gn = np.linalg.norm(base_grad(b, grid), axis=1)
    far = b.distance_to_attractor(grid) > 2 * np.max(hi - lo) / resolution
    seeds = grid[far & (gn < np.quantile(gn[far], 0.01))]
    found: list[np.ndarray] = []
    for x in seeds:
        for _ in range(50):
            g = base_grad(b, x)
            H = np.stack([base_hvp(b, x, e) for e in np.eye(len(x))], axis=1)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if np.linalg.norm(step) < 1e-14:
                break
        if (np.linalg.norm(base_grad(b, x)) < 1e-10 and np.all(x >= lo) and np.all(x <= hi)
                and b.distance_to_attractor(x) > 1e-6
                and not any(np.linalg.norm(x - f) < 1e-6 for f in found)):
            found.append(x)
    return np.array(found).reshape(-1, len(lo))
