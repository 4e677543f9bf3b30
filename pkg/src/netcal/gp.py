"""Dense Gaussian process primitives and maximum-likelihood coregionalization fits.

Everything here works on explicit covariance matrices. Factorizations add a
small relative jitter to the diagonal and escalate it tenfold (at most three
times) when Cholesky fails.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.linalg as sla
from scipy import optimize

from netcal.data import Dataset
from netcal.kernels import (
    JITTER,
    CoregWeights,
    KernelParams,
    combined_covariance,
    expand_coreg,
    eq_kernel,
    scaled_differences,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
MAX_JITTER_RETRIES = 3


class NumericalError(ArithmeticError):
    """Cholesky factorization failed even after jitter escalation."""

    def __init__(self, message: str, jitter: float):
        super().__init__(f"{message} (last jitter tried: {jitter:.3g})")
        self.jitter = jitter


class FitError(RuntimeError):
    """Hyperparameter optimization produced a non-finite objective."""

    def __init__(self, message: str, last_finite: Optional["CoregParams"]):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass(frozen=True)
class NoiseModel:
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance >= 0):
            raise ValueError(f"noise variance must be >= 0, got {self.variance}")


@dataclass(frozen=True)
class GPPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))


def base_jitter(A: np.ndarray) -> float:
    """Default diagonal stabilizer: ``JITTER`` times the mean diagonal entry."""
    scale = float(np.mean(np.diag(A))) if A.size else 0.0
    return JITTER * scale if scale > 0 else JITTER


def cholesky(A: np.ndarray, jitter: Optional[float] = None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A + jitter*I``, escalating the jitter on failure.

    With ``jitter=None`` the exact factorization is tried first; on failure
    ``base_jitter(A)`` is added and then raised tenfold, at most
    ``MAX_JITTER_RETRIES`` times. Returns the factor and the jitter used.
    """
    A = np.asarray(A, dtype=float)
    eye = np.eye(A.shape[0])
    if jitter is None:
        try:
            return sla.cholesky(A, lower=True, check_finite=True), 0.0
        except (np.linalg.LinAlgError, ValueError):
            pass
        j = base_jitter(A)
    else:
        j = float(jitter)
    for attempt in range(MAX_JITTER_RETRIES + 1):
        try:
            L = sla.cholesky(A + j * eye, lower=True, check_finite=True)
            return L, j
        except (np.linalg.LinAlgError, ValueError):
            if attempt == MAX_JITTER_RETRIES:
                break
            j = 10.0 * j if j > 0 else JITTER
    raise NumericalError(f"Cholesky failed for {A.shape[0]}x{A.shape[0]} matrix", j)


@dataclass
class _Factor:
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    lml: float

    def inverse(self) -> np.ndarray:
        return sla.cho_solve((self.L, True), np.eye(self.L.shape[0]))


def _factor(K: np.ndarray, r: np.ndarray, noise_var: float) -> _Factor:
    K = np.asarray(K, dtype=float)
    r = np.asarray(r, dtype=float).reshape(-1)
    if K.shape != (r.size, r.size):
        raise ValueError(f"covariance shape {K.shape} does not match {r.size} targets")
    C = K + noise_var * np.eye(r.size)
    L, j = cholesky(C)
    alpha = sla.cho_solve((L, True), r)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    with np.errstate(over="ignore"):
        lml = -0.5 * float(r @ alpha) - 0.5 * logdet - 0.5 * r.size * LOG_2PI
    return _Factor(L, alpha, j, lml)


def log_marginal_likelihood(K: np.ndarray, y: np.ndarray, noise: NoiseModel) -> float:
    """``log N(y; 0, K + noise I)`` via Cholesky."""
    return _factor(K, y, noise.variance).lml


def posterior(
    K_train: np.ndarray,
    K_cross: np.ndarray,
    K_test: np.ndarray,
    y: np.ndarray,
    noise: NoiseModel,
) -> GPPosterior:
    """Condition a zero-mean GP on ``y``.

    ``K_cross`` has shape ``(n_train, n_test)``.
    """
    K_cross = np.asarray(K_cross, dtype=float)
    fac = _factor(K_train, y, noise.variance)
    mean = K_cross.T @ fac.alpha
    V = sla.solve_triangular(fac.L, K_cross, lower=True)
    cov = np.asarray(K_test, dtype=float) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return GPPosterior(mean, cov)


# ---------------------------------------------------------------------------
# maximum-likelihood fit of the coregionalized model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoregParams:
    a: CoregWeights
    kernel: KernelParams
    noise: NoiseModel


@dataclass(frozen=True)
class CoregFit:
    params: CoregParams
    log_marginal_likelihood: float
    initial_log_marginal_likelihood: float
    n_evaluations: int
    restarts: list = field(default_factory=list)


# noise variance floor applied only when noise is optimized in log space
_NOISE_FLOOR = 1e-10


class _CoregObjective:
    """Negative log marginal likelihood over a packed parameter vector.

    Packing: [log variance, log lengthscales..., log noise, free weights...],
    with frozen entries removed.
    """

    def __init__(self, points, sensor_of, y, init: CoregParams, frozen_names, fixed_weights):
        self.points = points
        self.sensor_of = np.asarray(sensor_of, dtype=int)
        self.y = y
        self.init = init
        self.ndim = init.kernel.ndim
        self.free_weights = [k for k in range(len(init.a)) if k not in fixed_weights]
        self.names = (
            ["variance"]
            + [f"lengthscale:{d}" for d in range(self.ndim)]
            + ["noise"]
            + [f"a:{k}" for k in self.free_weights]
        )
        self.mask = np.array([not self._is_frozen(n, frozen_names) for n in self.names])
        self.diffs2 = scaled_differences(points, points, KernelParams(1.0, (1.0,) * self.ndim)) ** 2
        self.full0 = self.full_vector(init)
        self.last_finite: Optional[CoregParams] = None
        self.n_evals = 0

    @staticmethod
    def _is_frozen(name, frozen):
        group = name.split(":")[0]
        group = {"lengthscale": "lengthscales"}.get(group, group)
        return name in frozen or group in frozen

    def full_vector(self, p: CoregParams) -> np.ndarray:
        noise = max(p.noise.variance, _NOISE_FLOOR)
        return np.concatenate(
            [
                [math.log(p.kernel.variance)],
                np.log(p.kernel.lengthscales),
                [math.log(noise)],
                p.a.a[self.free_weights],
            ]
        )

    def unpack(self, free: np.ndarray) -> CoregParams:
        full = self.full0.copy()
        full[self.mask] = free
        d = self.ndim
        kernel = KernelParams(math.exp(full[0]), tuple(np.exp(full[1 : 1 + d])))
        if self.mask[1 + d]:
            noise = NoiseModel(math.exp(full[1 + d]))
        else:
            noise = self.init.noise
        a = self.init.a.a.copy()
        a[self.free_weights] = full[2 + d :]
        return CoregParams(CoregWeights(a, self.init.a.reference), kernel, noise)

    def value_and_grad(self, free: np.ndarray) -> tuple[float, np.ndarray]:
        self.n_evals += 1
        try:
            p = self.unpack(free)
            Keq = eq_kernel(self.points, self.points, p.kernel)
            B = expand_coreg(p.a, self.sensor_of)
            K = Keq * B
            fac = _factor(K, self.y, p.noise.variance)
        except (NumericalError, ValueError, OverflowError):
            return np.inf, np.zeros_like(free)
        if not math.isfinite(fac.lml):
            return np.inf, np.zeros_like(free)
        self.last_finite = p
        # dL/dC = 0.5 (alpha alpha^T - C^-1)
        G = 0.5 * (np.outer(fac.alpha, fac.alpha) - fac.inverse())
        d = self.ndim
        grad = np.empty(len(self.names))
        grad[0] = np.sum(G * K)
        for k in range(d):
            grad[1 + k] = np.sum(G * K * self.diffs2[:, :, k] / p.kernel.lengthscales[k] ** 2)
        grad[1 + d] = np.trace(G) * p.noise.variance
        per_obs = p.a.a[self.sensor_of]
        GK = G * Keq
        for j, k in enumerate(self.free_weights):
            onehot = (self.sensor_of == k).astype(float)
            # dB/da_k = e_k a^T + a e_k^T, expanded per observation
            grad[2 + d + j] = 2.0 * onehot @ GK @ per_obs
        return -fac.lml, -grad[self.mask]


def _fit_points(data: Dataset, kernel: KernelParams) -> np.ndarray:
    pts = data.points
    if kernel.ndim == 3:
        return pts
    if kernel.ndim == 1:
        return pts[:, 2:3]
    raise ValueError(f"kernel must have 1 (time) or 3 (x, y, t) lengthscales, got {kernel.ndim}")


def coreg_log_marginal_likelihood(data: Dataset, params: CoregParams) -> float:
    """Log marginal likelihood of ``data`` under the coregionalized model."""
    pts = _fit_points(data, params.kernel)
    K = combined_covariance(pts, data.sensor, params.kernel, params.a)
    return log_marginal_likelihood(K, data.values, params.noise)


def ml_fit_coreg(
    data: Dataset,
    init: CoregParams,
    frozen: Iterable[str] = (),
    restarts: int = 3,
    seed: int = 0,
    maxiter: int = 500,
) -> CoregFit:
    """Maximize the log marginal likelihood of the coregionalized GP.

    Parameters
    ----------
    data : Dataset
        Observations; every reference sensor keeps weight 1.
    init : CoregParams
        Starting point. Positive parameters are optimized in log space,
        coregionalization weights on their raw scale.
    frozen : iterable of str
        Names held fixed: ``"variance"``, ``"lengthscales"`` (or
        ``"lengthscale:<d>"``), ``"noise"``, ``"a"`` (all weights) or
        ``"a:<k>"``.
    restarts : int
        Number of extra optimizations from seeded perturbations of ``init``.
        The best objective wins.

    Raises
    ------
    FitError
        If no optimization ends at a finite objective.
    """
    frozen = set(frozen)
    refs = set(data.reference_sensors) | {init.a.reference}
    for r in refs:
        if init.a.a[r] != 1.0:
            raise ValueError(f"reference sensor {r} must start at weight 1")
    pts = _fit_points(data, init.kernel)
    y = data.values
    absent = set(range(len(init.a))) - set(data.sensors_present())
    obj = _CoregObjective(pts, data.sensor, y, init, frozen, refs | absent)

    x0 = obj.full0[obj.mask]
    f0, _ = obj.value_and_grad(x0)
    if not math.isfinite(f0):
        raise FitError("initial parameters give a non-finite log marginal likelihood", None)
    if not obj.mask.any():
        return CoregFit(init, -f0, -f0, obj.n_evals)

    rng = np.random.default_rng(seed)
    starts = [x0]
    is_weight = np.array([n.startswith("a:") for n in obj.names])[obj.mask]
    for _ in range(restarts):
        jitter = rng.normal(0.0, 0.5, size=x0.size)
        start = np.where(is_weight, x0 * np.exp(0.3 * jitter), x0 + jitter)
        starts.append(start)

    best_x, best_f, outcomes = x0, f0, []
    for start in starts:
        res = optimize.minimize(
            obj.value_and_grad, start, jac=True, method="L-BFGS-B", options={"maxiter": maxiter}
        )
        outcomes.append(float(-res.fun))
        if math.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    if not any(math.isfinite(v) for v in outcomes):
        raise FitError("optimizer diverged on every restart", obj.last_finite)
    log.debug("coreg fit restarts: %s", outcomes)
    return CoregFit(obj.unpack(best_x), -best_f, -f0, obj.n_evals, outcomes)


def coreg_gradient(data: Dataset, params: CoregParams, frozen: Iterable[str] = ()) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Names, packed values and the analytic gradient of the log marginal likelihood.

    Exposed so the optimizer's gradient can be checked against finite differences.
    """
    pts = _fit_points(data, params.kernel)
    obj = _CoregObjective(pts, data.sensor, data.values, params, set(frozen), set(data.reference_sensors) | {params.a.reference})
    x = obj.full0[obj.mask]
    f, g = obj.value_and_grad(x)
    names = [n for n, m in zip(obj.names, obj.mask) if m]
    return names, x, -g


def coreg_objective(data: Dataset, params: CoregParams, frozen: Iterable[str] = ()):
    """Return ``f(x) -> log marginal likelihood`` over the packed free parameters."""
    pts = _fit_points(data, params.kernel)
    obj = _CoregObjective(pts, data.sensor, data.values, params, set(frozen), set(data.reference_sensors) | {params.a.reference})
    return lambda x: -obj.value_and_grad(np.asarray(x, dtype=float))[0]

