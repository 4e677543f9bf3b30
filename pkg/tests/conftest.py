import numpy as np
import pytest

from netcal.data import Dataset


def random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n))
    return A @ A.T + 1e-3 * np.eye(n)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def random_dataset(rng, n_obs, n_sensors, n_ref=1, span=4.0):
    """Small random dataset; every sensor gets at least one reading."""
    sensor = np.concatenate([np.arange(n_sensors), rng.integers(0, n_sensors, n_obs - n_sensors)])
    pts = np.column_stack([rng.uniform(0, 3, n_obs), rng.uniform(0, 3, n_obs), rng.uniform(0, span, n_obs)])
    vals = rng.normal(1.0, 1.0, n_obs)
    return Dataset.from_arrays(sensor, pts, vals, n_sensors=n_sensors, reference_sensors=tuple(range(n_ref)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def colocated_pair(seed, factor=3.0, n_times=25, noise_frac=0.02, level=25.0):
    """Reference (sensor 0) and a biased unit (sensor 1) at the same site, ``2 * n_times`` readings."""
    r = np.random.default_rng(seed)
    t = np.linspace(0.0, 10.0, n_times)
    f = level + 6.0 * np.sin(t) + 2.0 * np.cos(2.3 * t)
    sd = noise_frac * level
    vals = np.concatenate([f + r.normal(0, sd, n_times), factor * f + r.normal(0, sd, n_times)])
    pts = np.zeros((2 * n_times, 3))
    pts[:, 2] = np.tile(t, 2)
    return Dataset.from_arrays(np.repeat([0, 1], n_times), pts, vals, n_sensors=2), sd
