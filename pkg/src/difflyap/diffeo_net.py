"""Bijective residual RBF layers and their composition.

A layer is the map ``phi(x) = x + W K(x)`` with Gaussian features
``K_i(x) = k(x, c_i)``.  Keeping every weight inside the box
``|W[j, i]| <= margin * rho`` makes the Jacobian ``I + W G(x)`` diagonally
dominant enough that its determinant stays above ``1 - margin``, so each layer
(and any composition of layers) is an orientation preserving diffeomorphism.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernel_core import (KernelSpec, _as_points, layer_weight_bound,
                          partial_derivative_bounds, round_down_below)

FORMAT_VERSION = "difflyap-model/1"
DEFAULT_MARGIN = 0.99
# slack for re-derived bounds when validating stored weights
_BOUND_RTOL = 1e-12


class ConstraintViolation(ValueError):
    """A weight matrix leaves its invertibility box."""


class InverseNotConverged(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class RbfLayer:
    spec: KernelSpec
    centers: np.ndarray
    weights: np.ndarray
    margin: float = DEFAULT_MARGIN
    rho: np.ndarray = field(init=False, repr=False)
    box: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.spec.dim
        centers = np.array(self.centers, dtype=float).reshape(-1, n)
        weights = np.array(self.weights, dtype=float)
        N = centers.shape[0]
        if N < 1:
            raise ValueError("a layer needs at least one center")
        if weights.shape != (n, N):
            raise ValueError(f"weights have shape {weights.shape}, expected {(n, N)}")
        if not (0.0 < self.margin < 1.0):
            raise ValueError(f"margin must lie in (0, 1), got {self.margin}")
        if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(weights))):
            raise ValueError("centers and weights must be finite")
        rho = layer_weight_bound(N, self.spec)
        # margin * rho, rounded down so that n N box B_j <= margin holds in floats
        B = float(partial_derivative_bounds(self.spec).max())
        box = np.full(n, round_down_below(self.margin * rho, n, N, B, self.margin))
        rho = np.full(n, rho)
        for name, val in (("centers", centers), ("weights", weights), ("rho", rho),
                          ("box", box)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        self.check_constraint()

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    def check_constraint(self, layer_index: int | None = None) -> None:
        lim = self.box[:, None] * (1.0 + _BOUND_RTOL)
        bad = np.argwhere(np.abs(self.weights) > lim)
        if bad.size:
            j, i = bad[0]
            where = f"layer {layer_index}: " if layer_index is not None else ""
            raise ConstraintViolation(
                f"{where}|W[{j},{i}]| = {abs(self.weights[j, i]):.17g} exceeds "
                f"margin*rho = {self.box[j]:.17g}")

    def with_weights(self, weights) -> "RbfLayer":
        return RbfLayer(self.spec, self.centers, weights, self.margin)

    @classmethod
    def zeros(cls, spec: KernelSpec, centers, margin: float = DEFAULT_MARGIN) -> "RbfLayer":
        centers = np.asarray(centers, dtype=float).reshape(-1, spec.dim)
        return cls(spec, centers, np.zeros((spec.dim, centers.shape[0])), margin)

    # -- evaluation helpers shared with the trainer --------------------------

    def features(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(K, diff, proj)`` for a batch ``xs`` of shape (M, n).

        K: (M, N) kernel values, diff: (M, N, n) = x - c_i,
        proj: (M, N, n) = inv(Sigma) (x - c_i).
        """
        diff = xs[:, None, :] - self.centers[None, :, :]
        proj = diff @ self.spec.inv_covariance
        K = np.exp(-0.5 * np.einsum("mni,mni->mn", proj, diff))
        return K, diff, proj


def _check_finite(xs: np.ndarray) -> None:
    if not np.all(np.isfinite(xs)):
        raise ValueError("input contains non-finite values")


def layer_forward(layer: RbfLayer, x) -> np.ndarray:
    xs, single = _as_points(x, layer.dim)
    _check_finite(xs)
    K, _, _ = layer.features(xs)
    out = xs + K @ layer.weights.T
    return out[0] if single else out


def layer_jacobian(layer: RbfLayer, x) -> np.ndarray:
    """Jacobian ``I + W G(x)`` with ``G[i] = grad_x k(x, c_i)``."""
    xs, single = _as_points(x, layer.dim)
    _check_finite(xs)
    K, _, proj = layer.features(xs)
    G = -K[..., None] * proj  # (M, N, n)
    J = np.eye(layer.dim)[None] + np.einsum("jn,mnl->mjl", layer.weights, G)
    return J[0] if single else J


def layer_inverse(layer: RbfLayer, y, tol: float = 1e-10, max_iter: int = 200,
                  method: str = "newton") -> np.ndarray:
    """Solve ``layer_forward(x) = y`` for x.

    The residual ``x -> W K(x)`` is a contraction, so ``x <- y - W K(x)``
    converges from ``x = y``.  Its ratio can approach the margin (0.99), so by
    default each iterate also tries a Newton step on the always-invertible
    Jacobian and keeps whichever candidate has the smaller residual.
    ``method="fixed_point"`` runs the plain contraction.
    """
    if method not in ("newton", "fixed_point"):
        raise ValueError(f"unknown inverse method {method!r}")
    ys, single = _as_points(y, layer.dim, "y")
    _check_finite(ys)
    W = layer.weights
    x = ys.copy()
    if not np.any(W):
        return x[0] if single else x

    r, K, proj = residual_sub(layer, x, ys)
    rn = np.linalg.norm(r, axis=1)
    for _ in range(max_iter):
        active = rn > tol
        if not np.any(active):
            break
        xa = x[active]
        cand = ys[active] - K[active] @ W.T
        if method == "newton":
            G = -K[active][..., None] * proj[active]
            J = np.eye(layer.dim)[None] + np.einsum("jn,mnl->mjl", W, G)
            newton = xa - np.linalg.solve(J, r[active][..., None])[..., 0]
            rf, Kf, pf = residual_sub(layer, cand, ys[active])
            rnw, Kn, pn = residual_sub(layer, newton, ys[active])
            use_newton = np.linalg.norm(rnw, axis=1) < np.linalg.norm(rf, axis=1)
            sel = use_newton[:, None]
            x[active] = np.where(sel, newton, cand)
            r[active] = np.where(sel, rnw, rf)
            K[active] = np.where(sel, Kn, Kf)
            proj[active] = np.where(sel[..., None], pn, pf)
        else:
            x[active] = cand
            r[active], K[active], proj[active] = residual_sub(layer, cand, ys[active])
        rn = np.linalg.norm(r, axis=1)
    worst = float(np.max(rn))
    if worst > tol:
        raise InverseNotConverged(
            f"layer inverse did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {worst:.3e})", worst)
    if method == "newton":
        # the Jacobian can be close to singular (det >= 1 - margin), so a small
        # residual may still hide an error up to residual / (1 - margin) in x;
        # one more quadratically convergent step removes it
        G = -K[..., None] * proj
        J = np.eye(layer.dim)[None] + np.einsum("jn,mnl->mjl", W, G)
        polished = x - np.linalg.solve(J, r[..., None])[..., 0]
        rp = np.linalg.norm(residual_sub(layer, polished, ys)[0], axis=1)
        x = np.where((rp < rn)[:, None], polished, x)
    return x[0] if single else x


def residual_sub(layer: RbfLayer, xs: np.ndarray, ys: np.ndarray):
    """``phi(xs) - ys`` together with the features computed on the way."""
    K, _, proj = layer.features(xs)
    return xs + K @ layer.weights.T - ys, K, proj


@dataclass(frozen=True)
class DiffeoNet:
    dim: int
    layers: tuple[RbfLayer, ...] = ()
    version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        object.__setattr__(self, "layers", tuple(self.layers))
        for t, layer in enumerate(self.layers):
            if layer.dim != self.dim:
                raise ValueError(f"layer {t} has dim {layer.dim}, net has dim {self.dim}")
            layer.check_constraint(t)

    def __len__(self) -> int:
        return len(self.layers)

    def append(self, layer: RbfLayer) -> "DiffeoNet":
        return DiffeoNet(self.dim, self.layers + (layer,), self.version)


def net_forward(net: DiffeoNet, x, return_states: bool = False):
    """Apply the layers in order.  With ``return_states`` also return the list
    of intermediate images ``[z_0, ..., z_T]``."""
    xs, single = _as_points(x, net.dim)
    _check_finite(xs)
    z = xs
    states = [z]
    for layer in net.layers:
        K, _, _ = layer.features(z)
        z = z + K @ layer.weights.T
        states.append(z)
    out = z[0] if single else z
    if return_states:
        return out, [s[0] for s in states] if single else states
    return out


def net_jacobian(net: DiffeoNet, x) -> np.ndarray:
    """Chain-rule product J_T(z_{T-1}) ... J_1(z_0)."""
    xs, single = _as_points(x, net.dim)
    _check_finite(xs)
    z = xs
    J = np.broadcast_to(np.eye(net.dim), (xs.shape[0], net.dim, net.dim)).copy()
    for layer in net.layers:
        K, _, proj = layer.features(z)
        G = -K[..., None] * proj
        Jl = np.eye(net.dim)[None] + np.einsum("jn,mnl->mjl", layer.weights, G)
        J = Jl @ J
        z = z + K @ layer.weights.T
    return J[0] if single else J


def net_forward_jacobian(net: DiffeoNet, x) -> tuple[np.ndarray, np.ndarray]:
    """Forward image and Jacobian in a single pass over the layers."""
    xs, single = _as_points(x, net.dim)
    _check_finite(xs)
    z = xs
    J = np.broadcast_to(np.eye(net.dim), (xs.shape[0], net.dim, net.dim)).copy()
    for layer in net.layers:
        K, _, proj = layer.features(z)
        G = -K[..., None] * proj
        J = (np.eye(net.dim)[None] + np.einsum("jn,mnl->mjl", layer.weights, G)) @ J
        z = z + K @ layer.weights.T
    if single:
        return z[0], J[0]
    return z, J


def net_inverse(net: DiffeoNet, y, tol: float = 1e-10, max_iter: int = 200,
                method: str = "newton") -> np.ndarray:
    ys, single = _as_points(y, net.dim, "y")
    x = ys
    for layer in reversed(net.layers):
        x = layer_inverse(layer, x, tol=tol, max_iter=max_iter, method=method)
    return x[0] if single else x


# -- serialization -----------------------------------------------------------

def _fmt(v: float) -> str:
    if not np.isfinite(v):
        raise ValueError("cannot serialize non-finite number")
    s = format(float(v), ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _matrix(m: np.ndarray, indent: str) -> str:
    rows = ["[" + ", ".join(_fmt(v) for v in row) + "]" for row in np.atleast_2d(m)]
    if not rows:
        return "[]"
    inner = (",\n" + indent + "  ").join(rows)
    return "[\n" + indent + "  " + inner + "\n" + indent + "]"


def dumps(net: DiffeoNet) -> str:
    """Render the net as deterministic JSON text (17 significant digits)."""
    out = ["{",
           f'  "version": {json.dumps(net.version)},',
           f'  "dim": {net.dim},']
    if not net.layers:
        out.append('  "layers": []')
    else:
        out.append('  "layers": [')
        blocks = []
        ind = "      "
        for layer in net.layers:
            blocks.append("\n".join([
                "    {",
                f'{ind}"margin": {_fmt(layer.margin)},',
                f'{ind}"sigma": {_matrix(layer.spec.covariance, ind)},',
                f'{ind}"centers": {_matrix(layer.centers, ind)},',
                f'{ind}"weights": {_matrix(layer.weights, ind)}',
                "    }"]))
        out.append(",\n".join(blocks))
        out.append("  ]")
    out.append("}")
    return "\n".join(out) + "\n"


def loads(text: str) -> DiffeoNet:
    """Parse model text; raises ValueError on malformed input and
    :class:`ConstraintViolation` if any weight leaves its box."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed model file: {exc}") from exc
    try:
        version = doc["version"]
        dim = int(doc["dim"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model file: missing field {exc}") from exc
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {version!r}")
    layers = []
    for t, entry in enumerate(raw_layers):
        try:
            sigma = np.array(entry["sigma"], dtype=float).reshape(dim, dim)
            centers = np.array(entry["centers"], dtype=float).reshape(-1, dim)
            weights = np.array(entry["weights"], dtype=float).reshape(dim, -1)
            margin = float(entry["margin"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed layer {t}: {exc}") from exc
        try:
            layers.append(RbfLayer(KernelSpec(sigma), centers, weights, margin))
        except ConstraintViolation as exc:
            raise ConstraintViolation(f"layer {t}: {exc}") from None
    return DiffeoNet(dim, tuple(layers), version)


def save(net: DiffeoNet, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(net))
    tmp.replace(path)


def load(path) -> DiffeoNet:
    return loads(Path(path).read_text())
