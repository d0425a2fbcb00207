"""Receding-horizon layer growth for diffeomorphic Lyapunov functions.

Each outer iteration treats the next ``horizon`` layers as the control inputs
of the discrete system ``z_{t+1} = z_t + W_t K_t(z_t)``, optimizes all of them
by projected gradient descent on the empirical Lyapunov risk, appends only the
first one to the net and discards the rest.

Velocities are carried through the layers as tangent vectors
``u_t = J_{Phi_t}(x) xdot`` so that ``dV/dt = grad V_b(z_t) . u_t`` is
available at every depth without forming Jacobians.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import lsq_linear
from scipy.spatial import cKDTree

from .base_functions import BaseFunction, base_grad, base_hvp, base_value
from .data import TrajectoryDataset
from .diffeo_net import DEFAULT_MARGIN, DiffeoNet, RbfLayer, layer_forward, net_forward
from .kernel_core import KernelSpec
from .lyapunov import (DEFAULT_EXCLUSION_RADIUS, DEFAULT_HINGE_MARGIN, excluded_mask,
                       pointwise_risk, report_from_vdot, risk_derivative)

log = logging.getLogger(__name__)

KMEANS_STEPS = 25


class TrainingError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    horizon: int = 3
    iterations: int = 60
    neurons: int = 25
    sigma_policy: str = "nn"  # "nn" (kappa * median NN distance) or "fixed"
    kappa: float = 1.0
    sigma: float | list | None = None  # scalar std or full covariance for "fixed"
    center_policy: str = "subsample"  # or "kmeans"
    step_size: float = 1.0  # first step spans this fraction of the weight box
    max_steps: int = 200
    solver_tol: float = 1e-6
    risk_mode: str = "hinge"
    hinge_margin: float = DEFAULT_HINGE_MARGIN
    margin: float = DEFAULT_MARGIN
    seed: int = 0
    stop_tolerance: float = 1e-9
    patience: int = 3
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS
    minibatch: int | None = None
    anchor_weight: float = 0.0
    stop_on_zero_violations: bool = True  # otherwise stop only at zero hinge risk

    def __post_init__(self):
        if self.horizon < 1 or self.iterations < 1 or self.neurons < 1:
            raise ValueError("horizon, iterations and neurons must be >= 1")
        if self.max_steps < 1 or self.solver_tol <= 0 or self.step_size <= 0:
            raise ValueError("solver settings must be positive")
        if self.stop_tolerance <= 0:
            raise ValueError("stop_tolerance must be positive")
        if self.sigma_policy not in ("nn", "fixed"):
            raise ValueError(f"unknown sigma_policy {self.sigma_policy!r}")
        if self.sigma_policy == "fixed" and self.sigma is None:
            raise ValueError("sigma_policy 'fixed' needs sigma")
        if self.center_policy not in ("subsample", "kmeans"):
            raise ValueError(f"unknown center_policy {self.center_policy!r}")
        if self.risk_mode not in ("raw", "hinge"):
            raise ValueError(f"unknown risk_mode {self.risk_mode!r}")
        if not 0 < self.margin < 1:
            raise ValueError("margin must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    net: DiffeoNet
    log: list[dict] = field(default_factory=list)
    stopped: str = ""


# -- centers and bandwidth ------------------------------------------------------

def place_centers(points, N: int, policy: str = "subsample", seed=0,
                  kappa: float = 1.0, sigma=None) -> tuple[np.ndarray, KernelSpec]:
    """Choose ``N`` centers among ``points`` and the layer covariance.

    ``subsample`` draws N distinct points and sorts them lexicographically;
    ``kmeans`` runs exactly 25 Lloyd steps from a seeded k-means++ start.
    Without an explicit ``sigma`` the covariance is isotropic with standard
    deviation ``kappa`` times the median nearest-neighbour distance of the
    centers.
    """
    pts = np.asarray(points, float)
    uniq = np.unique(pts, axis=0)
    if N > len(uniq):
        raise ValueError(f"cannot place {N} centers on {len(uniq)} distinct points")
    rng = np.random.default_rng(seed)
    if policy == "subsample":
        centers = uniq[np.sort(rng.choice(len(uniq), size=N, replace=False))]
    elif policy == "kmeans":
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centers, _ = kmeans2(pts, N, iter=KMEANS_STEPS, minit="++", seed=rng)
        centers = centers[np.lexsort(centers.T[::-1])]
    else:
        raise ValueError(f"unknown center policy {policy!r}")
    dim = pts.shape[1]
    if sigma is not None:
        s = np.asarray(sigma, float)
        spec = KernelSpec(s) if s.ndim == 2 else KernelSpec.isotropic(dim, float(s))
    else:
        spec = KernelSpec.isotropic(dim, kappa * bandwidth(centers, pts))
    return centers, spec


def bandwidth(centers: np.ndarray, points: np.ndarray) -> float:
    """Median nearest-neighbour distance among centers (RMS spread of the
    points around a single center)."""
    if len(centers) == 1:
        s = float(np.sqrt(np.mean(np.sum((points - centers[0]) ** 2, axis=1))))
    else:
        d, _ = cKDTree(centers).query(centers, k=2)
        s = float(np.median(d[:, 1]))
    if not s > 0:
        s = 1.0
    return s


# -- horizon objective ------------------------------------------------------------

@dataclass
class _Horizon:
    """Data for one horizon solve: start images ``z0``, tangents ``u0``."""

    base: BaseFunction
    z0: np.ndarray
    u0: np.ndarray
    speed: np.ndarray
    on_attractor: np.ndarray
    layers: Sequence[RbfLayer]
    mode: str
    hinge_margin: float
    anchor_weight: float = 0.0

    def rollout(self, weights: Sequence[np.ndarray]):
        z, u = self.z0, self.u0
        cache = []
        for layer, W in zip(self.layers, weights):
            K, _, proj = layer.features(z)
            p = np.einsum("mni,mi->mn", proj, u)
            s = -K * p
            cache.append((z, u, K, proj, p, s))
            z = z + K @ W.T
            u = u + s @ W.T
            cache[-1] = cache[-1] + (z, u)
        return cache

    def terms(self, z, u):
        vdot = np.einsum("mi,mi->m", base_grad(self.base, z), u)
        return vdot, pointwise_risk(vdot, self.speed, self.on_attractor, self.mode,
                                    self.hinge_margin)

    def anchor(self, z):
        return self.anchor_weight * base_value(self.base, z[self.on_attractor])

    def objective(self, weights, per_step: bool = False):
        cache = self.rollout(weights)
        vals = []
        for entry in cache:
            z, u = entry[-2], entry[-1]
            total = float(np.add.reduce(self.terms(z, u)[1]))
            if self.anchor_weight and np.any(self.on_attractor):
                total += float(np.add.reduce(self.anchor(z)))
            vals.append(total)
        return vals if per_step else float(sum(vals))

    def gradient(self, weights):
        """Objective value and its exact gradient with respect to each W."""
        cache = self.rollout(weights)
        H = len(cache)
        n = self.z0.shape[1]
        zbar = np.zeros_like(self.z0)
        ubar = np.zeros_like(self.u0)
        grads = [None] * H
        total = 0.0
        att = self.on_attractor
        for h in range(H - 1, -1, -1):
            z_prev, u_prev, K, proj, p, s, z, u = cache[h]
            gb = base_grad(self.base, z)
            vdot = np.einsum("mi,mi->m", gb, u)
            terms = pointwise_risk(vdot, self.speed, att, self.mode, self.hinge_margin)
            dv = risk_derivative(vdot, self.speed, att, self.mode, self.hinge_margin)
            total += float(np.add.reduce(terms))
            zbar = zbar + dv[:, None] * base_hvp(self.base, z, u)
            ubar = ubar + dv[:, None] * gb
            if self.anchor_weight and np.any(att):
                total += float(np.add.reduce(self.anchor_weight * base_value(self.base, z[att])))
                zbar[att] += self.anchor_weight * gb[att]
            W = weights[h]
            grads[h] = zbar.T @ K + ubar.T @ s
            a = zbar @ W  # (M, N)
            b = ubar @ W
            sinv = self.layers[h].spec.inv_covariance
            bk = b * K
            zbar = (zbar
                    - np.einsum("mn,mni->mi", a * K, proj)
                    + np.einsum("mn,mni->mi", bk * p, proj)
                    - np.sum(bk, axis=1)[:, None] * (u_prev @ sinv))
            ubar = ubar - np.einsum("mn,mni->mi", bk, proj)
        assert all(g.shape == (n, layer.n_centers) for g, layer in zip(grads, self.layers))
        return total, grads


def solve_horizon(problem: _Horizon, config: TrainConfig) -> tuple[list[np.ndarray], float]:
    """Projected gradient descent over the horizon weights from zero.

    Step sizes start so that the first move spans ``step_size`` times each
    layer's box and are halved whenever a trial step fails to decrease the
    objective.  Every iterate is projected onto the boxes, so the result is
    always feasible and never worse than the zero initialization.
    """
    boxes = [layer.box[:, None] for layer in problem.layers]
    W = [np.zeros((layer.dim, layer.n_centers)) for layer in problem.layers]
    f, g = problem.gradient(W)
    scale = [np.max(np.abs(gh)) for gh in g]
    if not any(sc > 0 for sc in scale):
        return W, f
    alpha = [config.step_size * bx[0, 0] / sc if sc > 0 else 0.0 for bx, sc in zip(boxes, scale)]
    min_alpha = [a * config.solver_tol for a in alpha]
    for _ in range(config.max_steps):
        trial = [np.clip(Wh - a * gh, -bx, bx) for Wh, a, gh, bx in zip(W, alpha, g, boxes)]
        f_trial = problem.objective(trial)
        if f_trial < f:
            W = trial
            f, g = problem.gradient(W)
        else:
            alpha = [a * 0.5 for a in alpha]
            if all(a <= m for a, m in zip(alpha, min_alpha)):
                break
    for Wh, bx in zip(W, boxes):
        assert np.all(np.abs(Wh) <= bx)
    return W, f


# -- training loop ---------------------------------------------------------------

def _tangents(net: DiffeoNet, x: np.ndarray, xdot: np.ndarray):
    z, u = x, xdot
    for layer in net.layers:
        K, _, proj = layer.features(z)
        s = -K * np.einsum("mni,mi->mn", proj, u)
        z = z + K @ layer.weights.T
        u = u + s @ layer.weights.T
    return z, u


def _anchor_points(base: BaseFunction, dim: int) -> np.ndarray:
    if base.kind == "point_attractor":
        return np.zeros((1, dim))
    if base.kind == "multi_point":
        return np.array(base.attractors)
    return np.zeros((0, dim))


def _candidate_layers(z: np.ndarray, config: TrainConfig, iteration: int, dim: int):
    layers = []
    n_pts = len(np.unique(z, axis=0))
    N = min(config.neurons, n_pts)
    for h in range(config.horizon):
        centers, spec = place_centers(z, N, config.center_policy,
                                      seed=[config.seed, iteration, h],
                                      kappa=config.kappa,
                                      sigma=config.sigma if config.sigma_policy == "fixed" else None)
        layers.append(RbfLayer.zeros(spec, centers, config.margin))
    return layers


def train(config: TrainConfig, base: BaseFunction, data: TrajectoryDataset,
          net: DiffeoNet | None = None, callback=None) -> TrainResult:
    """Grow a net layer by layer; returns the net and a per-iteration log."""
    if len(data) == 0:
        raise ValueError("empty training data")
    if base.kind == "multi_point" and base.attractors.shape[1] != data.dim:
        raise ValueError("base function and data dimensions differ")
    net = DiffeoNet(data.dim) if net is None else net
    if net.dim != data.dim:
        raise ValueError("net and data dimensions differ")

    x, xdot = data.x, data.xdot
    speed = np.linalg.norm(xdot, axis=1)
    excluded = excluded_mask(base, x, data.attractor, config.exclusion_radius)
    z, u = _tangents(net, x, xdot)
    # anchor rows: the base's attractor points with zero velocity; they only
    # enter the objective through the anchor term
    anchors = _anchor_points(base, data.dim) if config.anchor_weight else np.zeros((0, data.dim))
    za = net_forward(net, anchors) if len(anchors) else anchors
    flags = np.concatenate([data.attractor, np.ones(len(anchors), bool)])
    speed_aug = np.concatenate([speed, np.zeros(len(anchors))])
    rng = np.random.default_rng([config.seed, 7919])
    result = TrainResult(net)
    prev_risk = np.inf
    stall = 0
    t_start = time.perf_counter()

    mode, margin = config.risk_mode, config.hinge_margin

    n_anchor = len(za)
    for it in range(config.iterations):
        layers = _candidate_layers(z, config, it, data.dim)
        if config.minibatch and config.minibatch < len(data):
            idx = np.sort(rng.choice(len(data), size=config.minibatch, replace=False))
            rows = np.concatenate([idx, len(data) + np.arange(n_anchor)])
        else:
            rows = slice(None)
        zs, us = np.vstack([z, za]), np.vstack([u, np.zeros_like(za)])
        problem = _Horizon(base, zs[rows], us[rows], speed_aug[rows], flags[rows], layers,
                           mode, margin, config.anchor_weight)
        weights, _ = solve_horizon(problem, config)
        first = weights[0]

        # keep the appended layer no worse than appending the identity
        one_step = _Horizon(base, zs, us, speed_aug, flags, layers[:1], mode, margin,
                            config.anchor_weight)
        zero_risk = one_step.objective([np.zeros_like(first)])
        scale = 1.0
        while scale > 1e-6 and one_step.objective([scale * first]) > zero_risk:
            scale *= 0.5
        first = scale * first if scale > 1e-6 else np.zeros_like(first)

        layer = layers[0].with_weights(first)
        net = net.append(layer)
        K, _, proj = layer.features(z)
        s = -K * np.einsum("mni,mi->mn", proj, u)
        z = z + K @ first.T
        u = u + s @ first.T
        if len(za):
            za = layer_forward(layer, za)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
            raise TrainingError(f"non-finite state after iteration {it}")

        vdot = np.einsum("mi,mi->m", base_grad(base, z), u)
        risk = float(np.add.reduce(pointwise_risk(vdot, speed, data.attractor, mode, margin)))
        report = report_from_vdot(vdot, excluded)
        if not np.isfinite(risk):
            raise TrainingError(f"non-finite risk at iteration {it}")
        entry = {
            "iteration": it,
            "risk": risk,
            "violation_rate": report.violation_rate,
            "wall_time": time.perf_counter() - t_start,
            "neurons": layer.n_centers,
            "sigma": layer.spec.covariance.tolist(),
            "centers": layer.centers.tolist(),
            "first_scale": scale,
        }
        result.log.append(entry)
        log.info("iteration %d: risk %.6g, violations %.2f%%", it, risk, report.violation_rate)
        if callback is not None:
            callback(entry)

        if config.stop_on_zero_violations and report.violation_rate == 0.0:
            result.stopped = "no training violations"
            break
        if risk == 0.0:
            result.stopped = "zero training risk"
            break
        stall = stall + 1 if prev_risk - risk < config.stop_tolerance else 0
        prev_risk = min(prev_risk, risk)
        if stall >= config.patience:
            result.stopped = f"risk improvement below {config.stop_tolerance:g} for {stall} iterations"
            break
    else:
        result.stopped = "iteration limit"
    result.net = net
    return result


# -- regression mode ---------------------------------------------------------------

def fit_diffeo_regression(x, y, depth: int, config: TrainConfig | None = None,
                          x_test=None, y_test=None) -> tuple[DiffeoNet, list[float]]:
    """Greedy layer-wise least-squares fit of ``Phi(x) ~ y`` under the weight
    boxes.  Each layer solves a bounded linear least-squares problem exactly.

    Returns the net and the mean error ``mean |Phi(x) - y|`` after each layer
    (evaluated on the test pairs when given).
    """
    config = config or TrainConfig()
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("x and y must be matching (M, n) arrays")
    net = DiffeoNet(x.shape[1])
    z = x.copy()
    ex, ey = (x, y) if x_test is None else (np.asarray(x_test, float), np.asarray(y_test, float))
    ez = ex.copy()
    errors = [float(np.mean(np.linalg.norm(ez - ey, axis=1)))]
    n_distinct = len(np.unique(z, axis=0))
    for t in range(depth):
        if np.max(np.abs(z - y)) == 0:
            break
        centers, spec = place_centers(z, min(config.neurons, n_distinct), config.center_policy,
                                      seed=[config.seed, t], kappa=config.kappa,
                                      sigma=config.sigma if config.sigma_policy == "fixed" else None)
        layer = RbfLayer.zeros(spec, centers, config.margin)
        K, _, _ = layer.features(z)
        box = layer.box
        W = np.zeros((x.shape[1], layer.n_centers))
        for j in range(x.shape[1]):
            sol = lsq_linear(K, y[:, j] - z[:, j], bounds=(-box[j], box[j]), method="bvls")
            W[j] = np.clip(sol.x, -box[j], box[j])
        layer = layer.with_weights(W)
        net = net.append(layer)
        z = z + K @ W.T
        Ke, _, _ = layer.features(ez)
        ez = ez + Ke @ W.T
        errors.append(float(np.mean(np.linalg.norm(ez - ey, axis=1))))
    return net, errors
