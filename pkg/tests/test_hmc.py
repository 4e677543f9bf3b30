import math

import numpy as np
import pytest
from scipy import integrate

from netcal.hmc import (
    Chain,
    HMCConfig,
    InitializationError,
    diagnostics,
    effective_sample_size,
    leapfrog,
    run_chains,
    sample,
    split_rhat,
)


def std_normal(dim):
    return (lambda x: -0.5 * float(x @ x)), (lambda x: -x)


def double_well():
    # U(x) = 2 (x^2 - 1)^2, modes at +-1
    return (lambda x: -2.0 * float((x[0] ** 2 - 1) ** 2)), (lambda x: np.array([-8.0 * x[0] * (x[0] ** 2 - 1)]))


def double_well_tv(samples, edges):
    dens = lambda x: math.exp(-2.0 * (x * x - 1) ** 2)
    Z, _ = integrate.quad(dens, -np.inf, np.inf)
    p = np.array([integrate.quad(dens, a, b)[0] for a, b in zip(edges[:-1], edges[1:])]) / Z
    counts, _ = np.histogram(samples, bins=edges)
    q = counts / samples.size
    # mass outside the grid counts once from each side
    return 0.5 * (np.abs(p - q).sum() + (1 - p.sum()) + (1 - q.sum()))


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(step_size=0.0), dict(n_leapfrog=0), dict(n_samples=0), dict(n_burnin=-1), dict(mass=(1.0, -1.0))]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            HMCConfig(**kw)


class TestLeapfrog:
    def test_reversible(self, rng):
        A = rng.normal(size=(4, 4))
        P = A @ A.T + np.eye(4)
        grad = lambda x: -P @ x
        inv_mass = rng.uniform(0.5, 2, 4)
        x0, p0 = rng.normal(size=4), rng.normal(size=4)
        x1, p1, _ = leapfrog(x0, p0, grad, 0.05, 25, inv_mass)
        x2, p2, _ = leapfrog(x1, -p1, grad, 0.05, 25, inv_mass)
        np.testing.assert_allclose(x2, x0, atol=1e-8)
        np.testing.assert_allclose(-p2, p0, atol=1e-8)

    def test_harmonic_oscillator_energy(self):
        grad = lambda x: -x
        x, p, _ = leapfrog(np.array([1.0]), np.array([0.0]), grad, 1e-3, 1000, np.ones(1))
        assert 0.5 * (x[0] ** 2 + p[0] ** 2) == pytest.approx(0.5, rel=1e-6)


class TestSample:
    def test_standard_normal_moments(self):
        lp, grad = std_normal(5)
        cfg = HMCConfig(step_size=0.25, n_leapfrog=10, n_samples=2000, n_burnin=200, seed=1)
        s = np.concatenate([c.samples for c in run_chains(lp, grad, [np.zeros(5)] * 4, cfg)])
        assert np.all(np.abs(s.mean(axis=0)) <= 0.1)
        v = s.var(axis=0)
        assert np.all((v >= 0.8) & (v <= 1.2))

    def test_tiny_step_accepts(self):
        lp, grad = std_normal(3)
        chain = sample(lp, grad, np.ones(3), HMCConfig(step_size=1e-6, n_leapfrog=1, n_samples=300, n_burnin=0))
        assert chain.accept_rate > 0.99

    def test_correlated_gaussian_covariance(self):
        cov = np.array([[1.0, 0.8], [0.8, 2.0]])
        prec = np.linalg.inv(cov)
        chain = sample(
            lambda x: -0.5 * float(x @ prec @ x),
            lambda x: -prec @ x,
            np.zeros(2),
            HMCConfig(step_size=0.3, n_leapfrog=12, n_samples=5000, n_burnin=300, seed=5),
        )
        est = np.cov(chain.samples.T)
        assert np.max(np.abs(est - cov) / np.abs(cov)) < 0.15

    def test_bit_identical_with_seed(self):
        lp, grad = std_normal(2)
        cfg = HMCConfig(step_size=0.3, n_samples=200, n_burnin=20, seed=9)
        a, b = sample(lp, grad, np.zeros(2), cfg), sample(lp, grad, np.zeros(2), cfg)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.log_densities.tobytes() == b.log_densities.tobytes()

    def test_threaded_chains_match_serial(self):
        lp, grad = std_normal(2)
        cfg = HMCConfig(step_size=0.3, n_samples=100, n_burnin=10, seed=2)
        serial = run_chains(lp, grad, [np.zeros(2)] * 3, cfg)
        threaded = run_chains(lp, grad, [np.zeros(2)] * 3, cfg, workers=3)
        for a, b in zip(serial, threaded):
            assert a.samples.tobytes() == b.samples.tobytes()
        assert serial[0].samples.tobytes() != serial[1].samples.tobytes()

    def test_nonfinite_init(self):
        with pytest.raises(InitializationError):
            sample(lambda x: -math.inf, lambda x: x, np.zeros(1), HMCConfig())

    def test_nonfinite_proposals_rejected(self):
        # density vanishes outside the unit box
        lp = lambda x: 0.0 if np.all(np.abs(x) < 1) else -math.inf
        chain = sample(lp, lambda x: np.zeros_like(x), np.zeros(2), HMCConfig(step_size=0.4, n_leapfrog=5, n_samples=500, n_burnin=0))
        assert np.all(np.abs(chain.samples) < 1)
        assert 0 < chain.accept_rate < 1

    def test_chain_shape_and_rate(self):
        lp, grad = std_normal(3)
        chain = sample(lp, grad, np.zeros(3), HMCConfig(n_samples=50, n_burnin=5))
        assert chain.samples.shape == (50, 3) and len(chain.log_densities) == 50
        assert 0.0 <= chain.accept_rate <= 1.0

    def test_adaptation_reaches_target(self):
        lp, grad = std_normal(10)
        cfg = HMCConfig(step_size=2.0, n_leapfrog=5, n_samples=1000, n_burnin=500, adapt_step_size=True, seed=4)
        chain = sample(lp, grad, np.zeros(10), cfg)
        assert chain.step_size < 2.0
        assert 0.65 < chain.accept_rate < 0.95

    def test_double_well_total_variation(self):
        lp, grad = double_well()
        chain = sample(lp, grad, np.array([1.0]), HMCConfig(step_size=0.25, n_leapfrog=8, n_samples=50_000, n_burnin=1000, seed=11))
        assert double_well_tv(chain.samples[:, 0], np.linspace(-2.0, 2.0, 41)) < 0.05


class TestDiagnostics:
    def test_iid_ess(self, rng):
        x = rng.standard_normal(4000)
        assert effective_sample_size(x) >= 0.5 * x.size

    def test_constant_chain(self):
        d = diagnostics(Chain(np.full((100, 2), 3.0), 0.0, np.zeros(100)))
        np.testing.assert_array_equal(d.ess, 1.0)

    def test_alternating_capped(self):
        x = np.tile([1.0, -1.0], 500)
        assert effective_sample_size(x) == x.size

    def test_ess_bounded(self, rng):
        # AR(1) with phi=0.9 has ESS about n (1-phi)/(1+phi)
        n, phi = 20000, 0.9
        e = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for i in range(1, n):
            x[i] = phi * x[i - 1] + e[i]
        ess = effective_sample_size(x)
        assert ess <= n
        assert ess == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.25)

    def test_empty_chain(self):
        with pytest.raises(ValueError):
            diagnostics(Chain(np.zeros((0, 1)), 0.0, np.zeros(0)))

    def test_rhat(self, rng):
        same = [rng.standard_normal(500) for _ in range(4)]
        assert split_rhat(same) == pytest.approx(1.0, abs=0.02)
        apart = [rng.standard_normal(500) + 3 * k for k in range(4)]
        assert split_rhat(apart) > 1.5
