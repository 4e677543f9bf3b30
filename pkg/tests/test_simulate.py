import math

import numpy as np
import pytest

from netcal.simulate import (
    FieldSpec,
    ScenarioConfig,
    ScenarioError,
    Trajectory,
    default_scenario,
    gen_clogging,
    gen_network,
    gen_two_sensor,
    network_trajectories,
    noise_draws,
    sample_true_field,
    true_weight,
    with_overrides,
)
from netcal.kernels import SpaceTimePoint


def rows_of(data, s):
    return data.sensor == s


class TestTwoSensor:
    data = gen_two_sensor(default_scenario("two_sensor"))

    def test_opc_reads_three_times_truth(self):
        opc = rows_of(self.data, 1)
        tr = self.data.truth
        ratio = self.data.values[opc] / tr.field[opc]
        # within 4 noise sd of the exact bias
        tol = 4 * 0.5 / tr.field[opc]
        assert np.all(np.abs(ratio - 3.0) < tol)
        np.testing.assert_array_equal(tr.weight[opc], 3.0)

    def test_two_sensors(self):
        assert set(self.data.sensor) == {0, 1}
        assert self.data.reference_sensors == {0}

    def test_colocated_then_separates(self):
        ref, opc = self.data.points[rows_of(self.data, 0)], self.data.points[rows_of(self.data, 1)]
        dist = np.hypot(*(opc[:, :2] - ref[:, :2]).T)
        t = ref[:, 2]
        np.testing.assert_array_equal(dist[t <= 0], 0.0)
        assert np.all(np.diff(dist[t >= 0]) > 0)

    def test_same_true_value_at_both_sites(self):
        f = self.data.truth.field
        np.testing.assert_array_equal(f[rows_of(self.data, 0)], f[rows_of(self.data, 1)])

    def test_unit_bias(self):
        cfg = with_overrides(default_scenario("two_sensor", seed=4), weights={1: 1.0})
        d = gen_two_sensor(cfg)
        diff = d.values[rows_of(d, 1)] - d.values[rows_of(d, 0)]
        sd = cfg.noise_std * math.sqrt(2)
        assert abs(diff.mean()) < 3 * sd / math.sqrt(diff.size)
        assert np.std(diff) == pytest.approx(sd, rel=0.35)

    def test_wrong_kind(self):
        with pytest.raises(ScenarioError):
            gen_two_sensor(default_scenario("network"))


class TestNetwork:
    cfg = default_scenario("network")
    data = gen_network(cfg)

    def test_seven_sensors(self):
        assert sorted(set(self.data.sensor)) == list(range(7))
        assert self.data.reference_sensors == {0}

    def test_reference_unbiased(self):
        ref = rows_of(self.data, 0)
        tr = self.data.truth
        np.testing.assert_array_equal(tr.weight[ref], 1.0)
        np.testing.assert_array_equal(self.data.values[ref], tr.field[ref] + tr.noise[ref])

    def test_fixed_weights(self):
        for s, w in self.cfg.weights.items():
            np.testing.assert_array_equal(self.data.truth.weight[rows_of(self.data, s)], w)

    def _colocated(self, mobile, site, tol=1e-6):
        pm = self.data.points[rows_of(self.data, mobile)]
        return np.hypot(pm[:, 0] - self.cfg.sites[site][0], pm[:, 1] - self.cfg.sites[site][1]) <= tol

    def test_every_static_unit_visited(self):
        for site in (3, 4, 5, 6):
            assert any(self._colocated(m, site).any() for m in (1, 2)), site

    def test_mobile_two_dwells_longer_at_reference(self):
        assert self._colocated(2, 0).sum() > self._colocated(1, 0).sum()

    def test_sites_5_6_only_by_mobile_one(self):
        for site in (5, 6):
            assert not self._colocated(2, site).any()

    def test_no_teleporting(self):
        for m in (1, 2):
            p = self.data.points[rows_of(self.data, m)]
            step = np.hypot(np.diff(p[:, 0]), np.diff(p[:, 1]))
            assert np.all(step <= self.cfg.max_speed * np.diff(p[:, 2]) + 1e-12)

    def test_speed_limit_enforced(self):
        fast = with_overrides(self.cfg, max_speed=1.0)
        with pytest.raises(ScenarioError):
            network_trajectories(fast)


class TestClogging:
    cfg = default_scenario("clogging")
    data = gen_clogging(cfg)

    def test_decays_then_recovers(self):
        t = np.linspace(0, 120, 1201)
        w = true_weight(self.cfg, 1, t)
        before = t < self.cfg.maintenance_time
        assert np.all(np.diff(w[before]) <= 0)
        assert true_weight(self.cfg, 1, [self.cfg.maintenance_time])[0] == w[0]

    def test_field_in_band(self):
        f = self.data.truth.field
        assert f.min() >= 10.0 and f.max() <= 40.0


class TestTrueField:
    def test_deterministic_function(self):
        cfg = default_scenario("clogging")
        p = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        f = sample_true_field(cfg, p)
        assert f[0] == f[1]

    def test_gp_reproducible(self):
        cfg = default_scenario("network", seed=3)
        p = np.random.default_rng(0).uniform(0, 10, size=(30, 3))
        assert sample_true_field(cfg, p).tobytes() == sample_true_field(cfg, p).tobytes()
        assert sample_true_field(cfg, p).tobytes() != sample_true_field(with_overrides(cfg, seed=4), p).tobytes()

    def test_gp_variogram(self):
        spec = FieldSpec(mode="gp", level=0.0, variance=4.0, lengthscales=(1.0, 1.0, 1.0))
        cfg = ScenarioConfig(kind="network", seed=7, field=spec)
        x = np.linspace(0, 200, 500)
        pts = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
        f = sample_true_field(cfg, pts)
        dx = x[1] - x[0]
        for lag in (1, 3, 6):
            h = lag * dx
            emp = 0.5 * np.mean((f[lag:] - f[:-lag]) ** 2)
            model = spec.variance * (1 - math.exp(-0.5 * h**2))
            assert emp == pytest.approx(model, rel=0.3), (h, emp, model)


class TestReconstruction:
    @pytest.mark.parametrize("kind", ["two_sensor", "network", "clogging"])
    def test_values_from_truth_and_noise_seed(self, kind):
        cfg = default_scenario(kind, seed=2)
        d = gen_two_sensor(cfg) if kind == "two_sensor" else gen_network(cfg) if kind == "network" else gen_clogging(cfg)
        noise = noise_draws(cfg, len(d))
        np.testing.assert_array_equal(d.truth.noise, noise)
        np.testing.assert_array_equal(d.values, d.truth.weight * d.truth.field + noise)

    @pytest.mark.parametrize("kind", ["two_sensor", "network", "clogging"])
    def test_regeneration_bit_identical(self, kind):
        a = [gen_two_sensor, gen_network, gen_clogging][["two_sensor", "network", "clogging"].index(kind)]
        d1, d2 = a(default_scenario(kind, 5)), a(default_scenario(kind, 5))
        assert d1 == d2
        assert d1.values.tobytes() == d2.values.tobytes()
        assert d1.truth == d2.truth

    def test_truth_not_needed_for_equality(self):
        d = gen_two_sensor(default_scenario("two_sensor"))
        assert d.without_truth() == d and d.without_truth().truth is None


class TestConfigValidation:
    def test_bad_span(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig(kind="two_sensor", span=(3.0, 1.0))

    def test_bad_kind(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig(kind="city")

    def test_trajectory_times_increase(self):
        with pytest.raises(ValueError):
            Trajectory((SpaceTimePoint(0, 0, 1), SpaceTimePoint(1, 0, 1)))

    def test_trajectory_interpolates(self):
        tr = Trajectory.through([(0, 0, 0), (4, 0, 2)])
        np.testing.assert_allclose(tr.position(np.array([1.0])), [[2.0, 0.0]])
