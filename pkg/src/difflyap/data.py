"""Trajectory datasets: CSV ingestion, finite-difference velocities,
normalization and RK4-integrated synthetic benchmark systems."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diffeo_net import DiffeoNet, RbfLayer, net_forward, net_forward_jacobian
from .kernel_core import KernelSpec

DIVERGENCE_LIMIT = 1e6


class DataError(ValueError):
    """Malformed or inconsistent trajectory data."""


@dataclass(frozen=True)
class TrajectoryDataset:
    """Samples ``(x, xdot)`` grouped into trajectories.

    Arrays: ``x`` and ``xdot`` (M, n); ``traj_id`` (M,) ints; ``t`` (M,)
    timestamps; ``attractor`` (M,) bools marking samples on the attractor set.
    ``offset``/``scale`` record an applied normalization
    ``x' = scale * (x - offset)``.
    """

    x: np.ndarray
    xdot: np.ndarray
    traj_id: np.ndarray
    t: np.ndarray
    attractor: np.ndarray
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 2:
            raise DataError(f"x must be 2-D, got shape {x.shape}")
        m = x.shape[0]
        xdot = np.array(self.xdot, dtype=float).reshape(x.shape)
        tid = np.array(self.traj_id, dtype=np.int64).reshape(m)
        t = np.array(self.t, dtype=float).reshape(m)
        att = np.array(self.attractor, dtype=bool).reshape(m)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xdot)) and np.all(np.isfinite(t))):
            raise DataError("dataset contains non-finite values")
        for k in np.unique(tid):
            tk = t[tid == k]
            if np.any(np.diff(tk) <= 0):
                raise DataError(f"timestamps of trajectory {k} are not strictly increasing")
        for name, val in (("x", x), ("xdot", xdot), ("traj_id", tid), ("t", t), ("attractor", att)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def trajectory_ids(self) -> np.ndarray:
        return np.unique(self.traj_id)

    def select(self, mask) -> "TrajectoryDataset":
        mask = np.asarray(mask)
        return replace(self, x=self.x[mask], xdot=self.xdot[mask], traj_id=self.traj_id[mask],
                       t=self.t[mask], attractor=self.attractor[mask])

    def trajectories(self, ids: Sequence[int]) -> "TrajectoryDataset":
        return self.select(np.isin(self.traj_id, list(ids)))

    @staticmethod
    def concat(parts: Sequence["TrajectoryDataset"], renumber: bool = True) -> "TrajectoryDataset":
        """Stack datasets; with ``renumber`` trajectory ids are made disjoint."""
        if not parts:
            raise DataError("nothing to concatenate")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise DataError(f"inconsistent dimensions {sorted(dims)}")
        ids, nxt = [], 0
        for p in parts:
            if renumber:
                _, inv = np.unique(p.traj_id, return_inverse=True)
                ids.append(inv + nxt)
                nxt += int(inv.max()) + 1 if len(p) else 0
            else:
                ids.append(p.traj_id)
        first = parts[0]
        return TrajectoryDataset(
            np.vstack([p.x for p in parts]), np.vstack([p.xdot for p in parts]),
            np.concatenate(ids), np.concatenate([p.t for p in parts]),
            np.concatenate([p.attractor for p in parts]), first.offset, first.scale,
            "+".join(p.source for p in parts if p.source))


# -- CSV ----------------------------------------------------------------------

def _parse_header(header: list[str], path) -> tuple[int, bool, bool]:
    if header[:2] != ["traj_id", "t"]:
        raise DataError(f"{path}:1: header must start with 'traj_id,t'")
    rest = header[2:]
    n = 0
    while n < len(rest) and rest[n] == f"x{n + 1}":
        n += 1
    if n == 0:
        raise DataError(f"{path}:1: no position columns x1..xn")
    tail = rest[n:]
    has_vel = tail[:n] == [f"xd{k + 1}" for k in range(n)]
    if has_vel:
        tail = tail[n:]
    has_att = tail == ["attractor"]
    if tail and not has_att:
        raise DataError(f"{path}:1: unexpected columns {tail}")
    return n, has_vel, has_att


def read_csv(path, fmt: str = "generic_csv") -> TrajectoryDataset:
    """Read one trajectory CSV (``traj_id,t,x1..xn[,xd1..xdn][,attractor]``).

    Missing velocities are computed by :func:`compute_velocities`.  With
    ``fmt="lasa_mat_export_csv"`` the terminal sample of every demonstration
    gets zero velocity and is flagged as an attractor sample.
    """
    if fmt not in ("generic_csv", "lasa_mat_export_csv"):
        raise DataError(f"unknown data format {fmt!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        n, has_vel, has_att = _parse_header(header, path)
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no samples")
    a = np.array(rows)
    tid = a[:, 0]
    if np.any(tid != np.round(tid)):
        raise DataError(f"{path}: traj_id must be integer")
    tid = tid.astype(np.int64)
    t = a[:, 1]
    x = a[:, 2:2 + n]
    xdot = a[:, 2 + n:2 + 2 * n] if has_vel else compute_velocities(x, t, tid)
    att = a[:, -1] != 0 if has_att else np.zeros(len(a), bool)
    if fmt == "lasa_mat_export_csv":
        xdot = xdot.copy()
        att = att.copy()
        for k in np.unique(tid):
            last = np.flatnonzero(tid == k)[-1]
            xdot[last] = 0.0
            att[last] = True
    try:
        return TrajectoryDataset(x, xdot, tid, t, att, source=str(path))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def convert_lasa_mat(mat_path, csv_path) -> TrajectoryDataset:
    """Convert one LASA handwriting ``.mat`` file to the CSV schema read by
    ``read_csv(..., fmt="lasa_mat_export_csv")``.

    Each entry of the ``demos`` cell array becomes one trajectory (ids 0..6)
    with its ``t`` and ``pos`` fields; velocities are left to the loader.
    """
    from scipy.io import loadmat

    mat_path = Path(mat_path)
    if not mat_path.exists():
        raise FileNotFoundError(f"data file not found: {mat_path}")
    m = loadmat(mat_path, squeeze_me=True, struct_as_record=False)
    if "demos" not in m:
        raise DataError(f"{mat_path}: no 'demos' variable")
    lines = ["traj_id,t,x1,x2"]
    for k, demo in enumerate(np.atleast_1d(m["demos"])):
        pos = np.asarray(demo.pos, float)
        t = np.asarray(demo.t, float).ravel()
        if pos.shape != (2, t.size):
            raise DataError(f"{mat_path}: demo {k} has pos {pos.shape} and t {t.shape}")
        for ti, (a, b) in zip(t, pos.T):
            lines.append(f"{k},{ti:.17g},{a:.17g},{b:.17g}")
    csv_path = Path(csv_path)
    tmp = csv_path.with_name(csv_path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(csv_path)
    return read_csv(csv_path, "lasa_mat_export_csv")


def load_trajectories(files, fmt: str = "generic_csv") -> TrajectoryDataset:
    """Load and merge several CSV files; trajectory ids are renumbered so
    trajectories from different files never collide."""
    if isinstance(files, (str, Path)):
        files = [files]
    parts = [read_csv(f, fmt) for f in files]
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        detail = ", ".join(f"{p.source}: n={p.dim}" for p in parts)
        raise DataError(f"inconsistent state dimensions across files ({detail})")
    if len(parts) == 1:
        return parts[0]
    return TrajectoryDataset.concat(parts)


def dumps_csv(data: TrajectoryDataset) -> str:
    n = data.dim
    header = (["traj_id", "t"] + [f"x{k + 1}" for k in range(n)]
              + [f"xd{k + 1}" for k in range(n)] + ["attractor"])
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for i in range(len(data)):
        vals = [str(int(data.traj_id[i])), format(data.t[i], ".17g")]
        vals += [format(v, ".17g") for v in data.x[i]]
        vals += [format(v, ".17g") for v in data.xdot[i]]
        vals.append("1" if data.attractor[i] else "0")
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def write_csv(data: TrajectoryDataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_csv(data), encoding="utf-8")
    tmp.replace(path)


# -- preprocessing ----------------------------------------------------------

def compute_velocities(x, t, traj_id=None) -> np.ndarray:
    """Finite-difference velocities per trajectory: second-order central
    differences inside, first-order one-sided at the ends."""
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    tid = np.zeros(len(x), np.int64) if traj_id is None else np.asarray(traj_id)
    out = np.zeros_like(x)
    for k in np.unique(tid):
        idx = np.flatnonzero(tid == k)
        if idx.size < 2:
            raise DataError(f"trajectory {k} has fewer than two samples")
        if np.any(np.diff(t[idx]) <= 0):
            raise DataError(f"timestamps of trajectory {k} are not strictly increasing")
        out[idx] = np.gradient(x[idx], t[idx], axis=0, edge_order=1)
    return out


def normalize(data: TrajectoryDataset, equilibrium) -> TrajectoryDataset:
    """Shift ``equilibrium`` to the origin and scale each axis so the data
    fits in [-1, 1]; velocities are scaled by the same diagonal factor."""
    eq = np.asarray(equilibrium, float).reshape(data.dim)
    span = np.max(np.abs(data.x - eq), axis=0)
    span[span == 0] = 1.0
    scale = 1.0 / span
    return replace(data, x=(data.x - eq) * scale, xdot=data.xdot * scale,
                   offset=eq, scale=scale)


def denormalize(data: TrajectoryDataset) -> TrajectoryDataset:
    if data.scale is None:
        return data
    return replace(data, x=data.x / data.scale + data.offset, xdot=data.xdot / data.scale,
                   offset=None, scale=None)


def apply_normalization(data: TrajectoryDataset, offset, scale) -> TrajectoryDataset:
    """Apply an existing transform (e.g. from a training set) to other data."""
    offset = np.asarray(offset, float)
    scale = np.asarray(scale, float)
    return replace(data, x=(data.x - offset) * scale, xdot=data.xdot * scale,
                   offset=offset, scale=scale)


def subsample(data: TrajectoryDataset, count: int) -> TrajectoryDataset:
    """Keep ``count`` samples spread uniformly over the dataset order,
    always keeping the last one."""
    if count >= len(data):
        return data
    idx = np.unique(np.round(np.linspace(0, len(data) - 1, count)).astype(int))
    return data.select(idx)


# -- simulation --------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSystem:
    """Autonomous vector field integrated with fixed-step RK4."""

    kind: str
    vector_field: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    h: float = 0.01
    duration: float = 10.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("integration step must be positive")

    def __call__(self, x) -> np.ndarray:
        return self.vector_field(np.atleast_2d(np.asarray(x, float)))


def rk4_step(f, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(f, x0, h: float, steps: int) -> np.ndarray:
    """States of shape (steps + 1, B, n) for a batch of initial states."""
    x = np.atleast_2d(np.asarray(x0, float)).copy()
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for s in range(steps):
        x = rk4_step(f, x, h)
        bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x, axis=1) > DIVERGENCE_LIMIT)
        if np.any(bad):
            b = int(np.flatnonzero(bad)[0])
            raise ArithmeticError(
                f"trajectory from initial state {out[0, b].tolist()} diverged at t={(s + 1) * h:g}")
        out[s + 1] = x
    return out


def simulate(system: SyntheticSystem, initial_states, duration: float | None = None,
             sample_every: int = 1, first_id: int = 0) -> TrajectoryDataset:
    """Integrate each initial state and record ``(x, f(x))`` every
    ``sample_every`` RK4 steps."""
    duration = system.duration if duration is None else duration
    steps = int(round(duration / system.h))
    states = integrate(system, initial_states, system.h, steps)[::sample_every]
    T, B, n = states.shape
    x = states.transpose(1, 0, 2).reshape(-1, n)
    t = np.tile(np.arange(T) * system.h * sample_every, B)
    tid = np.repeat(np.arange(B) + first_id, T)
    return TrajectoryDataset(x, system(x), tid, t, np.zeros(len(x), bool),
                             source=f"simulate:{system.kind}")


def linear_system(rate: float = 1.0, h: float = 0.01) -> SyntheticSystem:
    return SyntheticSystem("linear", lambda x: -rate * x, h, 10.0, {"rate": rate})


# two-well potential U = (x^2 - 1)^2 / 4 + y^2 / 2 with a solenoidal twist
TWO_ATTRACTOR_STARTS = np.array([[-2.0, 1.5], [-2.0, -1.5], [2.0, 1.5],
                                 [2.0, -1.5], [-0.6, 1.8], [0.6, -1.8]])


def two_attractor_system(twist: float = 2.5, h: float = 0.01, duration: float = 6.0) -> SyntheticSystem:
    """``f = -(I - twist R) grad U`` with R the 90 degree rotation.

    Equilibria at (-1, 0), (1, 0) (stable) and (0, 0) (saddle); the rotational
    part is divergence free and does not move them.
    """
    def f(x):
        gx = x[:, 0] ** 3 - x[:, 0]
        gy = x[:, 1]
        return np.stack([-gx - twist * gy, -gy + twist * gx], axis=1)

    return SyntheticSystem("two_attractor", f, h, duration,
                           {"twist": twist, "attractors": [[-1.0, 0.0], [1.0, 0.0]]})


def van_der_pol(mu: float = 1.0, h: float = 0.01, duration: float = 6.0) -> SyntheticSystem:
    def f(x):
        return np.stack([x[:, 1], mu * (1 - x[:, 0] ** 2) * x[:, 1] - x[:, 0]], axis=1)

    return SyntheticSystem("van_der_pol", f, h, duration, {"mu": mu})


def find_limit_cycle(system: SyntheticSystem, x0=(0.5, 0.0), transient: float = 60.0,
                     h: float | None = None) -> tuple[np.ndarray, float]:
    """One period of the attracting cycle reached from ``x0``.

    Returns ``(states, period)`` where ``states`` samples one full revolution
    (first state repeated at the end) with step ``h``.
    """
    h = system.h if h is None else h
    x = integrate(system, x0, h, int(round(transient / h)))[-1]
    # Poincare section: upward crossings of x1 = 0 with x2 > 0
    probe = integrate(system, x, h, int(round(4 * transient / h)))[:, 0, :]
    s = probe[:, 0]
    up = np.flatnonzero((s[:-1] < 0) & (s[1:] >= 0) & (probe[:-1, 1] > 0))
    if up.size < 2:
        raise ArithmeticError("no periodic orbit detected")
    frac = -s[up] / (s[up + 1] - s[up])
    times = (up + frac) * h
    period = float(times[1] - times[0])
    start = probe[up[0]] + frac[0] * (probe[up[0] + 1] - probe[up[0]])
    steps = int(np.ceil(period / h))
    states = integrate(system, start, period / steps, steps)[:, 0, :]
    return states, period


def sample_limit_cycle(system: SyntheticSystem, count: int = 20, x0=(0.5, 0.0),
                       traj_id: int = 0) -> TrajectoryDataset:
    """``count`` points spread evenly in arc length along the limit cycle,
    flagged as attractor samples, with the (tangent) field as velocity."""
    states, period = find_limit_cycle(system, x0)
    seg = np.linalg.norm(np.diff(states, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(count) * arc[-1] / count
    pts = np.stack([np.interp(targets, arc, states[:, k]) for k in range(states.shape[1])], axis=1)
    t = np.interp(targets, arc, np.linspace(0.0, period, len(states)))
    return TrajectoryDataset(pts, system(pts), np.full(count, traj_id), t,
                             np.ones(count, bool), source=f"limit_cycle:{system.kind}")


# -- warped linear benchmark ---------------------------------------------------

@dataclass(frozen=True)
class WarpTruth:
    """Ground truth V(x) = |Psi(x) - Psi(0)|^2 for the warped-linear system."""

    net: DiffeoNet
    offset: np.ndarray

    def psi(self, x) -> np.ndarray:
        return net_forward(self.net, x) - self.offset

    def value(self, x) -> np.ndarray:
        p = self.psi(x)
        return np.sum(p * p, axis=-1)

    def grad(self, x) -> np.ndarray:
        z, J = net_forward_jacobian(self.net, x)
        p = z - self.offset
        if np.ndim(x) == 1:
            return 2.0 * J.T @ p
        return 2.0 * np.einsum("mji,mj->mi", J, p)


def random_constrained_net(rng: np.random.Generator, dim: int = 2, layers: int = 3,
                           repeat: int = 1, n_centers: int = 3, sigma: float = 0.4,
                           extent: float = 0.8, margin: float = 0.99) -> DiffeoNet:
    """Net of ``layers`` random layers, each applied ``repeat`` times in a row.

    Centers are uniform in [-extent, extent]^n and every weight sits at +/- its
    box limit.  Repeating a layer compounds its deformation coherently instead
    of letting independent random layers cancel out.
    """
    spec = KernelSpec.isotropic(dim, sigma)
    out = []
    for _ in range(layers):
        centers = rng.uniform(-extent, extent, size=(n_centers, dim))
        layer = RbfLayer.zeros(spec, centers, margin)
        signs = rng.choice([-1.0, 1.0], size=(dim, n_centers))
        out.extend([layer.with_weights(signs * layer.box[:, None])] * repeat)
    return DiffeoNet(dim, tuple(out))


def make_warped_linear(seed: int = 0, layers: int = 3, repeat: int = 7, h: float = 0.01,
                       duration: float = 6.0, net: DiffeoNet | None = None
                       ) -> tuple[SyntheticSystem, WarpTruth]:
    """System ``f(x) = -J_Psi(x)^{-1} (Psi(x) - Psi(0))`` whose Lyapunov
    function ``|Psi(x) - Psi(0)|^2`` is known in closed form.

    ``Psi`` defaults to :func:`random_constrained_net` with the given seed.
    """
    if net is None:
        net = random_constrained_net(np.random.default_rng(seed), layers=layers, repeat=repeat)
    offset = net_forward(net, np.zeros(net.dim))
    truth = WarpTruth(net, offset)

    def f(x):
        z, J = net_forward_jacobian(net, x)
        return -np.linalg.solve(J, (z - offset)[..., None])[..., 0]

    return SyntheticSystem("warped_linear", f, h, duration,
                           {"seed": seed, "layers": layers, "repeat": repeat}), truth


def ring_states(count: int, radius: float, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2 * np.pi * np.arange(count) / count
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
