from pathlib import Path

import numpy as np
import pytest

from difflyap.diffeo_net import DiffeoNet, RbfLayer
from difflyap.kernel_core import KernelSpec

DATA_DIR = Path(__file__).parent / "data"
LASA_DIR = DATA_DIR / "lasa"


def random_spd(rng, n, lo=0.2, hi=2.0):
    """Random SPD covariance with eigenvalues in [lo^2, hi^2]."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = rng.uniform(lo, hi, size=n) ** 2
    cov = (q * s) @ q.T
    return 0.5 * (cov + cov.T)


def random_layer(rng, n, N, fill=1.0, isotropic=False, extent=1.5):
    """Layer with random centers and weights filling ``fill`` of the box.

    Weights sit at +/-fill*box with random signs so the constraint is close
    to active.
    """
    if isotropic:
        spec = KernelSpec.isotropic(n, rng.uniform(0.3, 1.5))
    else:
        spec = KernelSpec(random_spd(rng, n))
    centers = rng.uniform(-extent, extent, size=(N, n))
    layer = RbfLayer.zeros(spec, centers)
    w = fill * rng.choice([-1.0, 1.0], size=(n, N)) * layer.box[:, None]
    return layer.with_weights(w)


def random_net(rng, n, T, N=4, fill=1.0):
    return DiffeoNet(n, tuple(random_layer(rng, n, N, fill) for _ in range(T)))


def central_jacobian(f, x, h=1e-6):
    """Central finite-difference Jacobian of f: R^n -> R^m at a single x."""
    x = np.asarray(x, float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append((number, bool(ok), detail))
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
