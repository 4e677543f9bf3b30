"""Scaled-measurement calibration model.

Each reading is ``y_n = w_n * f(x_n, t_n) + noise`` where ``f`` is a latent
spatio-temporal GP with fixed hyperparameters and ``w_n`` is the weight of
the sensor that produced it. Weights are deterministic functions of a small
latent vector ``z``:

* :class:`GaussianWeightPrior`: one scalar per non-reference sensor, constant
  over time, ``z_j ~ N(mean, variance)``.
* :class:`SparseWeightPrior`: per sensor, pseudo-observations ``z_j`` at
  virtual times ``t_s`` with a GP prior; the weight at time ``t`` is the GP
  posterior mean given ``z_j``.

Reference sensors are pinned to weight 1 and own no latent entries. The
field is integrated out analytically, so the collapsed likelihood is
``N(y; w * m0, W K_f W + s2 I)``; this is what :meth:`CalibrationModel.log_joint`
evaluates and what HMC samples over.

Weights map true to measured values: a sensor reading three times the
truth has weight 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from netcal.data import Dataset, Observation
from netcal.gp import (
    LOG_2PI,
    GPPosterior,
    NoiseModel,
    NumericalError,
    _factor,
    cholesky,
)
from netcal.kernels import JITTER, KernelParams, as_array, eq_kernel

LatentState = Mapping[int, np.ndarray]


@dataclass(frozen=True)
class GaussianWeightPrior:
    mean: float = 1.0
    variance: float = 25.0

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"weight prior variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class SparseWeightPrior:
    """GP prior over each sensor's weight trajectory, summarized at virtual times.

    ``t_s`` maps sensor index to its virtual times. Sensors without an entry
    get a uniform grid over their observation interval with ``spacing``
    (default: half the weight lengthscale).
    """

    theta_w: KernelParams
    t_s: Mapping[int, np.ndarray] = field(default_factory=dict)
    mean: float = 1.0
    jitter: float = JITTER
    spacing: Optional[float] = None

    def __post_init__(self):
        if self.theta_w.ndim != 1:
            raise ValueError("the weight GP is over time only; theta_w needs one lengthscale")
        ts = {int(k): np.asarray(v, dtype=float).reshape(-1) for k, v in dict(self.t_s).items()}
        for k, v in ts.items():
            if v.size == 0 or np.any(np.diff(v) <= 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"virtual times for sensor {k} must be finite and strictly increasing")
        object.__setattr__(self, "t_s", ts)
        if self.spacing is not None and not self.spacing > 0:
            raise ValueError("virtual time spacing must be positive")

    @property
    def grid_spacing(self) -> float:
        return self.spacing if self.spacing is not None else self.theta_w.lengthscales[0] / 2.0

    def times_for(self, sensor: int, obs_times: Optional[np.ndarray] = None) -> np.ndarray:
        if sensor in self.t_s:
            return self.t_s[sensor]
        if obs_times is None or len(obs_times) == 0:
            raise ValueError(f"no virtual times or observations for sensor {sensor}")
        return default_virtual_times(obs_times, self.grid_spacing)

    def gram(self, t_s: np.ndarray) -> np.ndarray:
        K = eq_kernel(t_s, t_s, self.theta_w)
        return K + self.jitter * self.theta_w.variance * np.eye(t_s.size)


WeightPrior = Union[GaussianWeightPrior, SparseWeightPrior]


def default_virtual_times(obs_times: np.ndarray, spacing: float) -> np.ndarray:
    """Uniform grid covering ``[min, max]`` of the observation times, at most ``spacing`` apart."""
    t0, t1 = float(np.min(obs_times)), float(np.max(obs_times))
    if t1 == t0:
        return np.array([t0])
    n = int(math.ceil((t1 - t0) / spacing - 1e-9)) + 1
    return np.linspace(t0, t1, max(n, 2))


@dataclass(frozen=True)
class LatentLayout:
    """Where each non-reference sensor's latent block sits in the flat vector."""

    sensors: tuple[int, ...]
    sizes: tuple[int, ...]
    t_s: Mapping[int, np.ndarray] = field(default_factory=dict)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)) if self.sizes else ()

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    def block(self, sensor: int) -> slice:
        i = self.sensors.index(sensor)
        off = self.offsets[i]
        return slice(off, off + self.sizes[i])

    def unflatten(self, z: np.ndarray) -> dict[int, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return {s: z[self.block(s)].copy() for s in self.sensors}

    def flatten(self, state: LatentState) -> np.ndarray:
        if not self.sensors:
            return np.zeros(0)
        return np.concatenate(
            [np.asarray(state[s], dtype=float).reshape(-1) for s in self.sensors]
        )

    def entries(self):
        """Yield ``(flat index, sensor, position within block)``."""
        for s, off, n in zip(self.sensors, self.offsets, self.sizes):
            for k in range(n):
                yield off + k, s, k


def _field_points(points: np.ndarray, theta_y: KernelParams) -> np.ndarray:
    pts = as_array(points)
    if theta_y.ndim == pts.shape[1]:
        return pts
    if theta_y.ndim == 1 and pts.shape[1] == 3:
        return pts[:, 2:3]
    raise ValueError(f"field kernel has {theta_y.ndim} lengthscales; points have {pts.shape[1]} dims")


class CalibrationModel:
    """Log joint density, gradient and field predictions for one dataset.

    Hyperparameters are fixed at construction. Methods take the flat latent
    vector whose layout is ``self.layout``.
    """

    def __init__(
        self,
        data: Dataset,
        prior: WeightPrior,
        theta_y: KernelParams,
        noise: NoiseModel,
        field_mean: float = 0.0,
    ):
        if len(data) == 0:
            raise ValueError("dataset has no observations")
        self.data = data
        self.prior = prior
        self.theta_y = theta_y
        self.noise = noise
        self.field_mean = float(field_mean)
        self.y = np.asarray(data.values, dtype=float)
        self.points = _field_points(data.points, theta_y)
        self.K_f = eq_kernel(self.points, self.points, theta_y)
        self._build_latents()
        self._cache_key: Optional[bytes] = None
        self._cache: Optional[tuple[float, np.ndarray]] = None

    # -- construction ------------------------------------------------------

    def _build_latents(self) -> None:
        data, prior = self.data, self.prior
        sensor = data.sensor
        times = data.times
        refs = data.reference_sensors
        latent_sensors = [s for s in data.sensors_present() if s not in refs]
        n = len(data)
        sizes, t_s = [], {}
        maps = {}
        for s in latent_sensors:
            rows = np.flatnonzero(sensor == s)
            if isinstance(prior, SparseWeightPrior):
                ts = prior.times_for(s, times[rows])
                t_s[s] = ts
                L, _ = cholesky(prior.gram(ts), jitter=0.0)
                A = sla.cho_solve((L, True), eq_kernel(ts, times[rows], prior.theta_w)).T
                maps[s] = (rows, A, L)
                sizes.append(ts.size)
            else:
                maps[s] = (rows, np.ones((rows.size, 1)), None)
                sizes.append(1)
        self.layout = LatentLayout(tuple(latent_sensors), tuple(sizes), t_s)
        # w = offset + G z
        G = np.zeros((n, self.layout.dim))
        offset = np.ones(n)
        for s in latent_sensors:
            rows, A, _ = maps[s]
            G[rows, self.layout.block(s)] = A
            if isinstance(prior, SparseWeightPrior):
                offset[rows] = prior.mean * (1.0 - A.sum(axis=1))
            else:
                offset[rows] = 0.0
        self.G, self.offset = G, offset
        self._prior_chol = {s: maps[s][2] for s in latent_sensors}

    @property
    def dim(self) -> int:
        return self.layout.dim

    def prior_mean_state(self) -> np.ndarray:
        return np.full(self.dim, float(self.prior.mean))

    def as_flat(self, z: Union[np.ndarray, LatentState]) -> np.ndarray:
        if isinstance(z, Mapping):
            return self.layout.flatten(z)
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.dim:
            raise ValueError(f"latent vector has {z.size} entries, layout expects {self.dim}")
        return z

    # -- weights -------------------------------------------------------------

    def weights(self, z) -> np.ndarray:
        """Per-observation weights."""
        return self.offset + self.G @ self.as_flat(z)

    def weight_at(self, z, sensor: int, times) -> np.ndarray:
        """Weight trajectory of ``sensor`` at arbitrary times."""
        times = np.asarray(times, dtype=float).reshape(-1)
        if sensor not in self.layout.sensors:
            if sensor in self.data.reference_sensors:
                return np.ones_like(times)
            raise KeyError(f"sensor {sensor} has no observations in this dataset")
        zj = self.as_flat(z)[self.layout.block(sensor)]
        if isinstance(self.prior, GaussianWeightPrior):
            return np.full_like(times, zj[0])
        return _sparse_interp(zj, self.layout.t_s[sensor], self.prior, times, self._prior_chol[sensor])

    def weight_extractor(self, sensor: int, times) -> Callable[[np.ndarray], np.ndarray]:
        """Linear map ``z -> weights`` for posterior summaries over many samples."""
        times = np.asarray(times, dtype=float).reshape(-1)
        if sensor not in self.layout.sensors:
            return lambda z: np.ones_like(times)
        blk = self.layout.block(sensor)
        if isinstance(self.prior, GaussianWeightPrior):
            return lambda z: np.full_like(times, np.asarray(z)[blk][0])
        ts = self.layout.t_s[sensor]
        A = sla.cho_solve(
            (self._prior_chol[sensor], True), eq_kernel(ts, times, self.prior.theta_w)
        ).T
        c = self.prior.mean * (1.0 - A.sum(axis=1))
        return lambda z: c + A @ np.asarray(z)[blk]

    # -- density -------------------------------------------------------------

    def log_prior(self, z) -> float:
        z = self.as_flat(z)
        total = 0.0
        for s in self.layout.sensors:
            d = z[self.layout.block(s)] - self.prior.mean
            if isinstance(self.prior, GaussianWeightPrior):
                total += -0.5 * d[0] ** 2 / self.prior.variance - 0.5 * (
                    math.log(self.prior.variance) + LOG_2PI
                )
            else:
                L = self._prior_chol[s]
                v = sla.solve_triangular(L, d, lower=True)
                total += -0.5 * v @ v - np.sum(np.log(np.diag(L))) - 0.5 * d.size * LOG_2PI
        return float(total)

    def _grad_log_prior(self, z: np.ndarray) -> np.ndarray:
        g = np.zeros_like(z)
        for s in self.layout.sensors:
            blk = self.layout.block(s)
            d = z[blk] - self.prior.mean
            if isinstance(self.prior, GaussianWeightPrior):
                g[blk] = -d / self.prior.variance
            else:
                g[blk] = -sla.cho_solve((self._prior_chol[s], True), d)
        return g

    def _field_factor(self, w: np.ndarray):
        K = np.outer(w, w) * self.K_f
        r = self.y - w * self.field_mean
        return _factor(K, r, self.noise.variance)

    def log_likelihood(self, z) -> float:
        """Collapsed log likelihood with the field integrated out."""
        return self._field_factor(self.weights(z)).lml

    def log_joint(self, z) -> float:
        z = self.as_flat(z)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val = self.log_prior(z) + self.log_likelihood(z)
        except (NumericalError, ValueError, FloatingPointError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    def value_and_grad(self, z) -> tuple[float, np.ndarray]:
        z = self.as_flat(z)
        key = z.tobytes()
        if key == self._cache_key:
            val, g = self._cache
            return val, g.copy()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                w = self.weights(z)
                fac = self._field_factor(w)
                alpha = fac.alpha
                Cinv = fac.inverse()
                # d/dw_n of log N(y; w m0, W K W + s2 I)
                g_w = (
                    alpha * self.field_mean
                    + alpha * (self.K_f @ (w * alpha))
                    - (Cinv * self.K_f) @ w
                )
                g = self.G.T @ g_w + self._grad_log_prior(z)
                val = self.log_prior(z) + fac.lml
        except (NumericalError, ValueError, FloatingPointError):
            return -math.inf, np.full_like(z, np.nan)
        if not (math.isfinite(val) and np.all(np.isfinite(g))):
            return -math.inf, np.full_like(z, np.nan)
        self._cache_key, self._cache = key, (val, g)
        return val, g.copy()

    def grad_log_joint(self, z) -> np.ndarray:
        return self.value_and_grad(z)[1]

    # -- prediction ----------------------------------------------------------

    def predict_field(self, z, query) -> GPPosterior:
        """Posterior of the latent field at ``query`` given the weights implied by ``z``."""
        w = self.weights(z)
        q = _field_points(query, self.theta_y)
        fac = self._field_factor(w)
        K_qo = eq_kernel(q, self.points, self.theta_y)
        KW = K_qo * w[None, :]
        mean = self.field_mean + KW @ fac.alpha
        V = sla.solve_triangular(fac.L, KW.T, lower=True)
        cov = eq_kernel(q, q, self.theta_y) - V.T @ V
        return GPPosterior(mean, 0.5 * (cov + cov.T))

    def predict_field_marginals(self, z, query) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise posterior mean and variance only (no query cross-covariance)."""
        w = self.weights(z)
        q = _field_points(query, self.theta_y)
        fac = self._field_factor(w)
        KW = eq_kernel(q, self.points, self.theta_y) * w[None, :]
        mean = self.field_mean + KW @ fac.alpha
        V = sla.solve_triangular(fac.L, KW.T, lower=True)
        var = self.theta_y.variance - np.sum(V * V, axis=0)
        return mean, var


def _sparse_interp(zj, ts, prior: SparseWeightPrior, times, L=None) -> np.ndarray:
    if L is None:
        L, _ = cholesky(prior.gram(ts), jitter=0.0)
    Ks = eq_kernel(times, ts, prior.theta_w)
    return prior.mean + Ks @ sla.cho_solve((L, True), np.asarray(zj, dtype=float) - prior.mean)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------


def weight_at(z: LatentState, prior: WeightPrior, sensor: int, times) -> np.ndarray:
    """Weights of ``sensor`` at ``times``; sensors absent from ``z`` are references (weight 1).

    For a sparse prior, ``prior.t_s`` must hold the sensor's virtual times.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if sensor not in z:
        return np.ones_like(times)
    zj = np.asarray(z[sensor], dtype=float).reshape(-1)
    if isinstance(prior, GaussianWeightPrior):
        return np.full_like(times, zj[0])
    if sensor not in prior.t_s:
        raise KeyError(f"prior has no virtual times for sensor {sensor}")
    return _sparse_interp(zj, prior.t_s[sensor], prior, times)


def log_joint(z, data: Dataset, prior: WeightPrior, theta_y: KernelParams, noise: NoiseModel, field_mean: float = 0.0) -> float:
    return CalibrationModel(data, prior, theta_y, noise, field_mean).log_joint(z)


def grad_log_joint(z, data: Dataset, prior: WeightPrior, theta_y: KernelParams, noise: NoiseModel, field_mean: float = 0.0) -> np.ndarray:
    model = CalibrationModel(data, prior, theta_y, noise, field_mean)
    return model.grad_log_joint(z)


def predict_field(z, data: Dataset, prior: WeightPrior, theta_y: KernelParams, noise: NoiseModel, query, field_mean: float = 0.0) -> GPPosterior:
    return CalibrationModel(data, prior, theta_y, noise, field_mean).predict_field(z, query)


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    """Divide every reading by the reference scale; the field mean becomes ``loc / scale``.

    Readings are not shifted: subtracting a constant from a scaled reading
    would break the multiplicative measurement model.
    """

    loc: float
    scale: float

    @classmethod
    def from_data(cls, data: Dataset) -> "Standardization":
        ref = data.values[data.is_reference()]
        if ref.size == 0:
            raise ValueError("standardization needs at least one reference observation")
        loc = float(np.mean(ref))
        scale = float(np.std(ref))
        if not scale > 0:
            scale = abs(loc) if loc != 0 else 1.0
        return cls(loc, scale)

    @property
    def field_mean(self) -> float:
        return self.loc / self.scale

    def apply(self, data: Dataset) -> Dataset:
        obs = tuple(
            Observation(o.sensor, o.where, o.value / self.scale) for o in data.observations
        )
        return Dataset(obs, data.n_sensors, data.reference_sensors)


# ---------------------------------------------------------------------------
# posterior summaries
# ---------------------------------------------------------------------------


class SummaryError(ValueError):
    """Not enough samples to summarize."""


@dataclass(frozen=True)
class PosteriorSummary:
    """Pointwise summary; ``lower``/``upper`` are median minus/plus one posterior standard deviation."""

    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    std: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_samples: int


def posterior_summary(chains: Sequence, extractor: Callable[[np.ndarray], np.ndarray], min_samples: int = 10, ci: float = 0.95) -> PosteriorSummary:
    """Median and one-standard-deviation band of ``extractor`` over pooled samples.

    ``chains`` holds :class:`~netcal.hmc.Chain` objects (or raw ``(n, d)``
    sample arrays); ``extractor`` maps one flat latent vector to an array.
    """
    pooled = [np.asarray(getattr(c, "samples", c)) for c in chains]
    pooled = [p for p in pooled if p.size or p.shape[0]]
    n = sum(p.shape[0] for p in pooled)
    if not pooled or n < min_samples:
        raise SummaryError(f"need at least {min_samples} samples, got {n}")
    vals = np.array([np.atleast_1d(extractor(z)) for p in pooled for z in p], dtype=float)
    tail = 100.0 * (1.0 - ci) / 2.0
    med = np.median(vals, axis=0)
    sd = np.std(vals, axis=0, ddof=1) if n > 1 else np.zeros(vals.shape[1])
    lo, hi = np.percentile(vals, [tail, 100.0 - tail], axis=0)
    return PosteriorSummary(med, med - sd, med + sd, sd, vals.mean(axis=0), lo, hi, n)
