"""Gaussian kernel evaluation, analytic gradients and the invertibility bound.

All functions accept either a single point of shape ``(n,)`` or a batch of
points of shape ``(M, n)`` and return results with the matching leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT_E_INV = float(np.exp(-0.5))


def _as_points(x, dim: int, name: str = "x") -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr2 = np.atleast_2d(arr)
    if arr2.ndim != 2 or arr2.shape[1] != dim:
        raise ValueError(f"{name} has shape {arr.shape}, expected (..., {dim})")
    return arr2, single


@dataclass(frozen=True)
class KernelSpec:
    """Shared Gaussian kernel parameters of one layer.

    ``covariance`` is validated (symmetry, Cholesky feasibility) and the
    eigendecomposition ``inv(covariance) = Q diag(D) Q^T`` is cached with a
    deterministic sign convention: each eigenvector's first nonzero entry is
    positive, then the last column is flipped if needed so that det(Q) = +1.
    """

    covariance: np.ndarray
    inv_covariance: np.ndarray = field(init=False, repr=False)
    eig_q: np.ndarray = field(init=False, repr=False)
    eig_d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] < 1:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariance contains non-finite entries")
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric within 1e-12 relative")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc

        inv = np.linalg.inv(cov)
        inv = 0.5 * (inv + inv.T)
        d, q = np.linalg.eigh(inv)
        if np.any(d <= 0):
            raise ValueError("covariance is not positive definite")
        for col in range(q.shape[1]):
            nz = np.flatnonzero(np.abs(q[:, col]) > 1e-14)
            if nz.size and q[nz[0], col] < 0:
                q[:, col] = -q[:, col]
        if np.linalg.det(q) < 0:
            q[:, -1] = -q[:, -1]

        for name, val in (("covariance", cov), ("inv_covariance", inv),
                          ("eig_q", q), ("eig_d", d)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def isotropic(cls, dim: int, sigma: float) -> "KernelSpec":
        return cls(np.eye(dim) * float(sigma) ** 2)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


def kernel_eval(spec: KernelSpec, x, c) -> np.ndarray | float:
    """k(x, c) = exp(-1/2 (x - c)^T inv(Sigma) (x - c)).

    ``x`` may be a batch ``(M, n)``; ``c`` may be a single center ``(n,)`` or a
    center set ``(N, n)``, in which case the result has shape ``(M, N)``.
    """
    xs, single_x = _as_points(x, spec.dim, "x")
    cs, single_c = _as_points(c, spec.dim, "c")
    diff = xs[:, None, :] - cs[None, :, :]
    quad = np.einsum("mni,ij,mnj->mn", diff, spec.inv_covariance, diff)
    k = np.exp(-0.5 * quad)
    if single_c:
        k = k[:, 0]
    if single_x:
        k = k[0]
    return k


def kernel_grad(spec: KernelSpec, x, c) -> np.ndarray:
    """Gradient of k(x, c) with respect to x: -k(x, c) inv(Sigma) (x - c).

    Shapes follow :func:`kernel_eval` with a trailing axis of length n.
    """
    xs, single_x = _as_points(x, spec.dim, "x")
    cs, single_c = _as_points(c, spec.dim, "c")
    diff = xs[:, None, :] - cs[None, :, :]
    proj = diff @ spec.inv_covariance
    quad = np.einsum("mni,mni->mn", proj, diff)
    g = -np.exp(-0.5 * quad)[..., None] * proj
    if single_c:
        g = g[:, 0]
    if single_x:
        g = g[0]
    return g


def partial_derivative_bounds(spec: KernelSpec) -> np.ndarray:
    """Vector of closed-form bounds B_j >= sup_x |dk(x, c)/dx_j| for every j.

    Along the eigen-axes z = Q^T (x - c) the kernel factorizes and
    |dk/dz_l| <= sqrt(D_l) e^{-1/2}; the chain rule through Q gives
    B_j = e^{-1/2} sum_l |Q_{j,l}| sqrt(D_l).
    """
    return SQRT_E_INV * (np.abs(spec.eig_q) @ np.sqrt(spec.eig_d))


def partial_derivative_bound(spec: KernelSpec, j: int) -> float:
    """Bound B_j for the 0-based coordinate index ``j``."""
    if not 0 <= j < spec.dim:
        raise IndexError(f"coordinate index {j} out of range for dim {spec.dim}")
    return float(partial_derivative_bounds(spec)[j])


def weight_bound(n: int, N: int, spec: KernelSpec, j: int) -> float:
    """Per-coordinate weight bound rho_j = 1 / (n N B_j)."""
    if n < 1 or N < 1:
        raise ValueError(f"need n >= 1 and N >= 1, got n={n}, N={N}")
    if n != spec.dim:
        raise ValueError(f"n={n} does not match kernel dimension {spec.dim}")
    B = partial_derivative_bound(spec, j)
    return round_down_below(1.0 / (n * N * B), n, N, B, 1.0)


def round_down_below(value: float, n: int, N: int, B: float, limit: float) -> float:
    """Largest float at or below ``value`` with ``n * N * value * B <= limit``
    evaluated left to right in floating point, so bounds stay sound after
    rounding."""
    value = float(value)
    while n * N * value * B > limit:
        value = float(np.nextafter(value, 0.0))
    return value


def layer_weight_bound(N: int, spec: KernelSpec) -> float:
    """Bound applied uniformly to every weight of a layer with N neurons.

    An entry E_{l,j} of the Jacobian disturbance mixes the weights of output
    row l with the derivative bound of input column j, so a single box valid
    for all rows must use max_j B_j, i.e. min_j rho_j.
    """
    n = spec.dim
    return min(weight_bound(n, N, spec, j) for j in range(n))
