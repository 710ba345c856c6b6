import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinflow.data import DatasetSpec, oracle_velocity
from twinflow.model import NetConfig, VelocityNet, init_params
from twinflow.sampler import integrate, nfe_sweep, sample, time_grid


class ConstantNet:
    def __init__(self, v0):
        self.v0 = np.asarray(v0, dtype=np.float64)
        self.cfg = NetConfig(data_dim=len(self.v0))

    def __call__(self, x, t, r, c=None):
        return np.broadcast_to(self.v0, x.shape).copy()


class PointMassOracle:
    """Average velocity over [r, t] of the flow toward a point mass at ``c``.

    The straight path is exact, so the instantaneous field (x - c)/t is also
    the average one for every target time.
    """

    def __init__(self, center):
        self.spec = DatasetSpec("point_mass", center=tuple(center))
        self.cfg = NetConfig(data_dim=len(center))

    def __call__(self, x, t, r, c=None):
        return oracle_velocity(self.spec, x, abs(t))


def test_time_grid_endpoints_exact():
    for k in (1, 3, 7, 10):
        g = time_grid(k)
        assert g[0] == 1.0 and g[-1] == 0.0 and len(g) == k + 1
        assert np.all(np.diff(g) < 0)
    with pytest.raises(ValueError):
        time_grid(0)


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 12), seed=st.integers(0, 100))
def test_constant_net_lands_on_z_minus_v0(k, seed):
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(2)
    z = rng.standard_normal((5, 2))
    out = integrate(ConstantNet(v0), z, k).samples
    np.testing.assert_allclose(out, z - v0, atol=1e-12)


def test_point_mass_oracle_one_step():
    c = (1.5, -0.5)
    z = np.random.default_rng(0).standard_normal((10, 2))
    out = integrate(PointMassOracle(c), z, 1).samples
    np.testing.assert_allclose(out, np.tile(c, (10, 1)), atol=1e-12)


def test_point_mass_oracle_many_steps():
    c = (0.25, 2.0)
    z = np.random.default_rng(1).standard_normal((10, 2))
    out = integrate(PointMassOracle(c), z, 6).samples
    np.testing.assert_allclose(out, np.tile(c, (10, 1)), atol=1e-12)


def test_trajectory_records_endpoints():
    z = np.random.default_rng(2).standard_normal((4, 2))
    run = integrate(ConstantNet([1.0, 0.0]), z, 4, record=True)
    assert len(run.trajectory) == 5
    np.testing.assert_array_equal(run.trajectory[0], z)
    np.testing.assert_array_equal(run.trajectory[-1], run.samples)


def test_fake_branch_uses_negative_times():
    seen = []

    class Spy(ConstantNet):
        def __call__(self, x, t, r, c=None):
            seen.append((t, r))
            return super().__call__(x, t, r, c)

    integrate(Spy([0.0, 0.0]), np.zeros((1, 2)), 2, branch="fake")
    assert seen == [(-1.0, -0.5), (-0.5, -0.0)]
    with pytest.raises(ValueError):
        integrate(Spy([0.0, 0.0]), np.zeros((1, 2)), 2, branch="sideways")


def test_nfe_sweep_shares_noise():
    cfg = NetConfig(hidden=8, depth=1, n_freqs=2)
    net = VelocityNet(cfg, init_params(cfg))  # zero output layer: identity map
    runs = nfe_sweep(net, 6, [1, 3], np.random.default_rng(3))
    np.testing.assert_array_equal(runs[0].samples, runs[1].samples)
    with pytest.raises(ValueError):
        nfe_sweep(net, 6, [], np.random.default_rng(3))


def test_sample_is_seeded():
    net = ConstantNet([0.5, 0.5])
    a = sample(net, 8, 2, np.random.default_rng(4)).samples
    b = sample(net, 8, 2, np.random.default_rng(4)).samples
    np.testing.assert_array_equal(a, b)
