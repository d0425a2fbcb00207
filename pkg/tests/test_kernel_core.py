import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import central_jacobian, random_spd
from difflyap.kernel_core import (SQRT_E_INV, KernelSpec, kernel_eval, kernel_grad,
                                  layer_weight_bound, partial_derivative_bound,
                                  partial_derivative_bounds, weight_bound)

# frozen oracle values (mpmath, 30 digits; dense grid search for the bound)
EXP_M1 = 0.36787944117144232160
BOUND_SIGMA_HALF = 1.2130613194252668472
RHO_N2_N10_QUARTER = 0.041218031767503203671
# Sigma^-1 = Q diag(1, 4) Q^T with Q the 30 degree rotation
B_ROT = (1.1318016191979087384, 1.3538072488268673414)


def rotation(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


@pytest.fixture
def rotated_spec():
    q = rotation(30)
    return KernelSpec(np.linalg.inv(q @ np.diag([1.0, 4.0]) @ q.T))


class TestKernelSpec:
    def test_eigendecomposition_reconstructs_inverse(self, rng):
        for n in (1, 2, 3, 5):
            spec = KernelSpec(random_spd(rng, n))
            q, d = spec.eig_q, spec.eig_d
            assert_allclose(q @ q.T, np.eye(n), atol=1e-10)
            assert_allclose(q @ np.diag(d) @ q.T, spec.inv_covariance,
                            rtol=1e-10, atol=1e-10 * np.abs(spec.inv_covariance).max())
            assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-10)
            assert np.all(d > 0)

    def test_sign_convention_is_deterministic(self, rng):
        cov = random_spd(rng, 3)
        a, b = KernelSpec(cov), KernelSpec(cov.copy())
        assert_array_equal(a.eig_q, b.eig_q)
        for col in a.eig_q.T[:-1]:
            first = col[np.flatnonzero(np.abs(col) > 1e-14)[0]]
            assert first > 0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            KernelSpec(np.array([[1.0, 0.1], [0.1 + 1e-9, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="positive definite"):
            KernelSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            KernelSpec(np.ones((2, 3)))

    def test_immutable(self):
        spec = KernelSpec.isotropic(2, 1.0)
        with pytest.raises(ValueError):
            spec.inv_covariance[0, 0] = 5.0


class TestKernelEval:
    def test_center_gives_one(self, rng):
        for n in (1, 2, 4):
            spec = KernelSpec(random_spd(rng, n))
            c = rng.normal(size=n)
            assert kernel_eval(spec, c, c) == 1.0

    def test_unit_1d(self):
        spec = KernelSpec(np.array([[1.0]]))
        assert kernel_eval(spec, [1.0], [0.0]) == pytest.approx(SQRT_E_INV, rel=1e-15)
        assert SQRT_E_INV == pytest.approx(0.6065306597, abs=1e-10)

    def test_diagonal_2d(self):
        spec = KernelSpec(np.diag([4.0, 1.0]))
        assert kernel_eval(spec, [2.0, 1.0], [0.0, 0.0]) == pytest.approx(EXP_M1, rel=1e-14)

    def test_dimension_mismatch(self):
        spec = KernelSpec.isotropic(2, 1.0)
        with pytest.raises(ValueError):
            kernel_eval(spec, [1.0, 2.0, 3.0], [0.0, 0.0])

    def test_batch_shapes(self, rng):
        spec = KernelSpec(random_spd(rng, 3))
        x = rng.normal(size=(7, 3))
        c = rng.normal(size=(4, 3))
        k = kernel_eval(spec, x, c)
        assert k.shape == (7, 4)
        assert k[2, 1] == kernel_eval(spec, x[2], c[1])
        assert kernel_grad(spec, x, c).shape == (7, 4, 3)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_symmetry_and_range(self, n, seed):
        rng = np.random.default_rng(seed)
        spec = KernelSpec(random_spd(rng, n))
        x, c = rng.normal(size=n) * 3, rng.normal(size=n) * 3
        k = kernel_eval(spec, x, c)
        assert k == kernel_eval(spec, c, x)
        assert 0.0 <= k <= 1.0
        if not np.array_equal(x, c):
            assert k < 1.0


class TestKernelGrad:
    def test_zero_at_center(self, rng):
        spec = KernelSpec(random_spd(rng, 3))
        c = rng.normal(size=3)
        assert_array_equal(kernel_grad(spec, c, c), np.zeros(3))

    def test_unit_1d(self):
        spec = KernelSpec(np.array([[1.0]]))
        assert kernel_grad(spec, [1.0], [0.0])[0] == pytest.approx(-SQRT_E_INV, rel=1e-15)

    def test_finite_differences(self, rng):
        for _ in range(1000):
            n = rng.choice([1, 2, 3, 5])
            spec = KernelSpec(random_spd(rng, n))
            x, c = rng.normal(size=n), rng.normal(size=n)
            fd = central_jacobian(lambda y: kernel_eval(spec, y, c), x)
            assert_allclose(kernel_grad(spec, x, c), fd, atol=1e-6)


class TestBounds:
    def test_unit_1d(self):
        spec = KernelSpec(np.array([[1.0]]))
        assert partial_derivative_bound(spec, 0) == pytest.approx(SQRT_E_INV, rel=1e-15)
        assert weight_bound(1, 1, spec, 0) == pytest.approx(1.6487212707, abs=1e-10)

    def test_narrow_1d(self):
        spec = KernelSpec(np.array([[0.25]]))
        assert partial_derivative_bound(spec, 0) == pytest.approx(BOUND_SIGMA_HALF, rel=1e-14)
        xs = np.linspace(-3, 3, 200001)[:, None]
        assert np.abs(kernel_grad(spec, xs, [0.0])).max() == pytest.approx(BOUND_SIGMA_HALF,
                                                                            rel=1e-8)

    def test_identity_2d_sampled(self, rng):
        spec = KernelSpec(np.eye(2))
        for j in range(2):
            assert partial_derivative_bound(spec, j) == pytest.approx(SQRT_E_INV, rel=1e-15)
        x = rng.uniform(-6, 6, size=(10**6, 2))
        sup = np.abs(kernel_grad(spec, x, np.zeros(2))).max(axis=0)
        assert np.all(sup <= SQRT_E_INV * (1 + 1e-9))

    def test_weight_bound_isotropic_quarter(self):
        spec = KernelSpec(0.25 * np.eye(2))
        for j in range(2):
            assert weight_bound(2, 10, spec, j) == pytest.approx(RHO_N2_N10_QUARTER, rel=1e-14)

    def test_weight_bound_jacobian_entries(self, rng):
        # weights at 0.999 rho: every entry of E = -W G stays below 1/n
        spec = KernelSpec(0.25 * np.eye(2))
        rho = weight_bound(2, 10, spec, 0)
        c = rng.uniform(-1, 1, size=(10, 2))
        W = 0.999 * rho * rng.choice([-1.0, 1.0], size=(2, 10))
        x = rng.uniform(-2, 2, size=(20000, 2))
        E = np.einsum("ji,mil->mjl", W, kernel_grad(spec, x, c))
        assert np.abs(E).max() < 0.5

    def test_rotated(self, rotated_spec, rng):
        b = partial_derivative_bounds(rotated_spec)
        assert_allclose(b, B_ROT, rtol=1e-13)
        rho = [weight_bound(2, 5, rotated_spec, j) for j in range(2)]
        assert_allclose(rho, [1 / (10 * B_ROT[0]), 1 / (10 * B_ROT[1])], rtol=1e-13)
        assert layer_weight_bound(5, rotated_spec) == pytest.approx(min(rho), rel=1e-15)

    def test_rotated_determinant(self, rotated_spec, rng):
        from difflyap.diffeo_net import RbfLayer, layer_jacobian
        x = rng.uniform(-3, 3, size=(10**5, 2))
        for _ in range(100):
            layer = RbfLayer.zeros(rotated_spec, rng.uniform(-1.5, 1.5, size=(5, 2)))
            W = rng.uniform(-1, 1, size=(2, 5)) * layer.box[:, None]
            det = np.linalg.det(layer_jacobian(layer.with_weights(W), x))
            assert det.min() > 0

    def test_index_out_of_range(self):
        spec = KernelSpec.isotropic(2, 1.0)
        with pytest.raises(IndexError):
            partial_derivative_bound(spec, 2)
        with pytest.raises(IndexError):
            partial_derivative_bound(spec, -1)

    def test_invalid_counts(self):
        spec = KernelSpec.isotropic(2, 1.0)
        with pytest.raises(ValueError):
            weight_bound(2, 0, spec, 0)
        with pytest.raises(ValueError):
            weight_bound(3, 1, spec, 0)

    def test_monotone_in_n_and_N(self):
        for n in (1, 2, 3):
            spec = KernelSpec.isotropic(n, 0.7)
            rhos = [weight_bound(n, N, spec, 0) for N in (1, 2, 5, 10, 50)]
            assert all(a > b for a, b in zip(rhos, rhos[1:]))
        by_n = [weight_bound(n, 4, KernelSpec.isotropic(n, 0.7), 0) for n in (1, 2, 3, 5)]
        assert all(a > b for a, b in zip(by_n, by_n[1:]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.floats(0.1, 10.0), st.floats(0.1, 3.0))
    def test_isotropic_scaling(self, n, s, sigma):
        a = weight_bound(n, 3, KernelSpec.isotropic(n, sigma), 0)
        b = weight_bound(n, 3, KernelSpec.isotropic(n, s * sigma), 0)
        assert b == pytest.approx(s * a, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_sampled_soundness(self, n, seed):
        rng = np.random.default_rng(seed)
        cov = random_spd(rng, n)
        spec = KernelSpec(cov)
        c = rng.normal(size=n)
        std = np.sqrt(np.diag(cov))
        x = c + rng.uniform(-6, 6, size=(20000, n)) * std
        sup = np.abs(kernel_grad(spec, x, c)).max(axis=0)
        assert np.all(sup <= partial_derivative_bounds(spec) * (1 + 1e-9))
