import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import central_jacobian, random_net
from difflyap.base_functions import BaseFunction, base_grad, base_value
from difflyap.data import TrajectoryDataset
from difflyap.diffeo_net import (DiffeoNet, layer_forward, net_forward, net_inverse,
                                 net_jacobian)
from difflyap.lyapunov import (LyapunovCandidate, directional_derivative, evaluate_grid,
                               export_grid, grid_points, lyap_grad, lyap_value, lyapunov_risk,
                               pointwise_risk, read_grid, violation_rate)


def dataset(x, xdot, attractor=None):
    x = np.atleast_2d(np.asarray(x, float))
    m = len(x)
    return TrajectoryDataset(x, np.atleast_2d(xdot), np.arange(m), np.zeros(m),
                             np.zeros(m, bool) if attractor is None else attractor)


@pytest.fixture
def point_cand():
    return LyapunovCandidate(BaseFunction.point(0.1), DiffeoNet(2))


@pytest.fixture
def random_cand(rng):
    return LyapunovCandidate(BaseFunction.point(0.1), random_net(rng, 2, 5, N=5))


class TestCandidate:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            LyapunovCandidate(BaseFunction.multi([[0, 0, 0]]), DiffeoNet(2))


class TestValueAndGrad:
    def test_empty_net_value(self, point_cand):
        assert lyap_value(point_cand, [1.0, 1.0]) == pytest.approx(0.2, rel=1e-15)

    def test_empty_net_grad(self, point_cand, rng):
        x = rng.normal(size=(10, 2))
        assert_array_equal(lyap_grad(point_cand, x), base_grad(point_cand.base, x))

    def test_composition_oracle(self, random_cand, rng):
        x = rng.uniform(-2, 2, size=(100, 2))
        z = x
        for layer in random_cand.net.layers:
            z = layer_forward(layer, z)
        assert_array_equal(lyap_value(random_cand, x), 0.1 * np.sum(z * z, axis=1))

    def test_zero_on_attractor_preimage(self, rng):
        net = random_net(rng, 2, 4)
        ring = LyapunovCandidate(BaseFunction.ring(1.0), net)
        a = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        pre = net_inverse(net, np.stack([np.cos(a), np.sin(a)], axis=1))
        # the inverse is exact to ~1e-10, so V = (|z|^2 - 1)^2 is ~1e-19 at worst
        assert_allclose(lyap_value(ring, pre), 0.0, atol=1e-18)
        assert_allclose(lyap_grad(ring, pre), 0.0, atol=1e-9)
        point = LyapunovCandidate(BaseFunction.point(0.1), net)
        origin = net_inverse(net, np.zeros(2))
        assert lyap_value(point, origin) == pytest.approx(0.0, abs=1e-20)
        assert_allclose(lyap_grad(point, origin), 0.0, atol=1e-10)

    def test_chain_rule_finite_differences(self, rng):
        bases = [BaseFunction.point(0.1), BaseFunction.multi([[-1, 0], [1, 0]]),
                 BaseFunction.ring(1.0)]
        for k in range(1000):
            cand = LyapunovCandidate(bases[k % 3], random_net(rng, 2, 2, N=3))
            x = rng.uniform(-2, 2, size=2)
            g = lyap_grad(cand, x)
            fd = central_jacobian(lambda y: lyap_value(cand, y), x)
            assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(np.abs(g).max(), 1e-3))

    def test_positivity_transport(self, random_cand, rng):
        x = rng.uniform(-2, 2, size=(1000, 2))
        v = lyap_value(random_cand, x)
        assert_array_equal(v, base_value(random_cand.base, net_forward(random_cand.net, x)))
        assert np.all(v > 0)


class TestCriticalPoints:
    def test_jacobian_full_rank(self, rng):
        net = random_net(rng, 2, 10, N=6)
        x = rng.uniform(-3, 3, size=(5000, 2))
        assert np.linalg.svd(net_jacobian(net, x), compute_uv=False).min() > 0

    def test_critical_sets_agree(self, rng):
        cand = LyapunovCandidate(BaseFunction.ring(0.8), random_net(rng, 2, 4))
        g = np.stack(np.meshgrid(np.linspace(-2, 2, 201), np.linspace(-2, 2, 201)),
                     -1).reshape(-1, 2)
        lhs = np.linalg.norm(lyap_grad(cand, g), axis=1) <= 1e-9
        rhs = np.linalg.norm(base_grad(cand.base, net_forward(cand.net, g)), axis=1) <= 1e-9
        assert_array_equal(lhs, rhs)


class TestDirectionalDerivative:
    def test_zero_velocity(self, random_cand):
        assert directional_derivative(random_cand, [0.3, 0.2], [0.0, 0.0]) == 0.0

    def test_hand_value(self, point_cand):
        assert directional_derivative(point_cand, [1.0, 0.0], [-1.0, 0.0]) == pytest.approx(
            -0.2, rel=1e-15)

    def test_orthogonal(self, random_cand, rng):
        x = rng.normal(size=2)
        g = lyap_grad(random_cand, x)
        assert abs(directional_derivative(random_cand, x, [-g[1], g[0]])) <= 1e-12


class TestRisk:
    def test_raw_single_sample(self, point_cand):
        data = dataset([1.0, 0.0], [-1.0, 0.0])
        assert lyapunov_risk(point_cand, data, mode="raw") == pytest.approx(-0.2, rel=1e-15)

    def test_hinge_all_slack(self, point_cand, rng):
        x = rng.uniform(0.5, 1.0, size=(50, 2))
        data = dataset(x, -x)
        assert lyapunov_risk(point_cand, data, mode="hinge", hinge_margin=0.01) == 0.0

    def test_raw_summation_oracle(self, random_cand, rng):
        x, xd = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
        expected = sum(float(lyap_grad(random_cand, a) @ b) for a, b in zip(x, xd))
        assert lyapunov_risk(random_cand, dataset(x, xd), "raw") == pytest.approx(expected,
                                                                                  rel=1e-12)

    def test_attractor_samples_contribute_absolute_value(self, point_cand):
        data = dataset([[1.0, 0.0], [1.0, 0.0]], [[-1.0, 0.0], [-1.0, 0.0]],
                       attractor=np.array([True, False]))
        assert lyapunov_risk(point_cand, data, "raw") == pytest.approx(0.0, abs=1e-15)

    def test_pointwise_modes(self):
        vdot = np.array([-1.0, -0.001, 0.5])
        speed = np.ones(3)
        off = np.zeros(3, bool)
        assert_allclose(pointwise_risk(vdot, speed, off, "hinge", 0.01), [0, 0.009, 0.51])
        with pytest.raises(ValueError):
            pointwise_risk(vdot, speed, off, "cubic")

    def test_empty_dataset(self, point_cand):
        empty = dataset(np.zeros((0, 2)), np.zeros((0, 2)))
        with pytest.raises(ValueError, match="empty"):
            lyapunov_risk(point_cand, empty)
        with pytest.raises(ValueError, match="empty"):
            violation_rate(point_cand, empty)


class TestViolationRate:
    def test_all_decreasing(self, point_cand, rng):
        x = rng.uniform(0.5, 1.0, size=(50, 2))
        report = violation_rate(point_cand, dataset(x, -x))
        assert report.violation_rate == 0.0
        assert report.violating_points == 0

    def test_half_violating(self, point_cand, rng):
        x = rng.uniform(0.5, 1.0, size=(40, 2))
        xd = np.vstack([-x[:20], x[20:]])
        report = violation_rate(point_cand, dataset(x, xd))
        assert report.violation_rate == 50.0
        d = report.to_dict()
        assert d["total_points"] == 40 and d["violating_points"] == 20
        assert set(d["margin_stats"]) == {"min", "mean", "max"}

    def test_exclusions(self, point_cand):
        x = np.array([[1e-4, 0.0], [0.5, 0.0], [0.6, 0.0]])
        data = dataset(x, x, attractor=np.array([False, True, False]))
        report = violation_rate(point_cand, data, exclusion_radius=1e-3)
        assert report.excluded_points == 2
        assert report.violation_rate == 100.0
        with pytest.raises(ValueError):
            violation_rate(point_cand, data, exclusion_radius=-1.0)

    @pytest.mark.parametrize("factor", [1e-3, 1.0, 1e3])
    def test_velocity_rescaling_invariance(self, random_cand, rng, factor):
        x, xd = rng.normal(size=(300, 2)), rng.normal(size=(300, 2))
        base = violation_rate(random_cand, dataset(x, xd)).violation_rate
        assert violation_rate(random_cand, dataset(x, factor * xd)).violation_rate == base


class TestGrid:
    def test_node_order_axis0_fastest(self):
        pts = grid_points([(0, 1), (0, 2)], [2, 3])
        assert_array_equal(pts, [[0, 0], [1, 0], [0, 1], [1, 1], [0, 2], [1, 2]])

    def test_invalid(self):
        with pytest.raises(ValueError):
            grid_points([(1, 1), (0, 1)], [3, 3])
        with pytest.raises(ValueError):
            grid_points([(0, 1), (0, 1)], [1, 3])

    def test_symmetry(self, point_cand):
        grid = evaluate_grid(point_cand, [(-1, 1), (-1, 1)], [21, 21])
        v = grid.reshaped("value")
        assert_allclose(v, v[::-1, ::-1], rtol=1e-14)

    def test_file_round_trip(self, random_cand, tmp_path):
        path = tmp_path / "grid.csv"
        grid = export_grid(random_cand, [(-1, 1), (-2, 2)], [11, 7], path, field=lambda x: -x)
        back = read_grid(path)
        assert_array_equal(back.points, grid.points)
        assert_array_equal(back.value, grid.value)
        assert_array_equal(back.gradnorm, grid.gradnorm)
        assert_array_equal(back.vdot, grid.vdot)
        assert back.resolution == (11, 7)
        assert path.read_text().splitlines()[1] == "x1,x2,V,gradnorm,Vdot"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rate_in_range(seed):
    rng = np.random.default_rng(seed)
    cand = LyapunovCandidate(BaseFunction.point(0.1), random_net(rng, 2, 2))
    x, xd = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
    report = violation_rate(cand, dataset(x, xd))
    assert 0.0 <= report.violation_rate <= 100.0
    kept = report.total_points - report.excluded_points
    assert report.violation_rate == pytest.approx(100.0 * report.violating_points / kept)
