"""Hamiltonian Monte Carlo with a diagonal mass matrix.

Plain HMC: fixed step size, fixed number of leapfrog steps, Metropolis
correction. Optional dual-averaging step-size adaptation runs during burn-in
only. Every chain draws from its own generator seeded with ``config.seed``,
so a chain is bit-reproducible from its config.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]


class InitializationError(ValueError):
    """The target density is not finite at the initial state."""


@dataclass(frozen=True)
class HMCConfig:
    step_size: float = 0.1
    n_leapfrog: int = 10
    n_samples: int = 1000
    n_burnin: int = 500
    seed: int = 0
    mass: Optional[tuple[float, ...]] = None
    adapt_step_size: bool = False
    target_accept: float = 0.8

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_burnin < 0:
            raise ValueError("n_burnin must be >= 0")
        if self.mass is not None:
            m = tuple(float(v) for v in self.mass)
            if not all(v > 0 and math.isfinite(v) for v in m):
                raise ValueError("mass entries must be positive")
            object.__setattr__(self, "mass", m)
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class Chain:
    samples: np.ndarray
    accept_rate: float
    log_densities: np.ndarray
    step_size: float = float("nan")

    def __len__(self) -> int:
        return self.samples.shape[0]


def leapfrog(x, p, grad_fn: Gradient, step_size: float, n_steps: int, inv_mass, grad_x=None):
    """Integrate Hamiltonian dynamics for ``n_steps`` leapfrog steps.

    Returns ``(x, p, grad at x)``; non-finite gradients propagate so the
    caller can reject the proposal.
    """
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    g = grad_fn(x) if grad_x is None else grad_x
    p = p + 0.5 * step_size * g
    for i in range(n_steps):
        x = x + step_size * inv_mass * p
        g = grad_fn(x)
        if not np.all(np.isfinite(g)):
            return x, p, g
        if i < n_steps - 1:
            p = p + step_size * g
    p = p + 0.5 * step_size * g
    return x, p, g


class _DualAveraging:
    """Step-size adaptation (Hoffman & Gelman, 2014) targeting an acceptance rate."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_prob: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def sample(log_density: LogDensity, gradient: Gradient, init, config: HMCConfig) -> Chain:
    """Draw ``config.n_samples`` states after ``config.n_burnin`` discarded ones."""
    x = np.array(init, dtype=float).reshape(-1)
    dim = x.size
    lp = float(log_density(x))
    if not math.isfinite(lp):
        raise InitializationError(f"log density at the initial state is {lp}")
    g = np.asarray(gradient(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise InitializationError("gradient at the initial state is not finite")

    mass = np.ones(dim) if config.mass is None else np.asarray(config.mass, dtype=float)
    if mass.size != dim:
        raise ValueError(f"mass has {mass.size} entries for a {dim}-dimensional target")
    inv_mass, sqrt_mass = 1.0 / mass, np.sqrt(mass)

    rng = np.random.default_rng(config.seed)
    eps = config.step_size
    adapter = _DualAveraging(eps, config.target_accept) if config.adapt_step_size else None

    total = config.n_burnin + config.n_samples
    samples = np.empty((config.n_samples, dim))
    log_dens = np.empty(config.n_samples)
    accepted = 0
    for it in range(total):
        p0 = sqrt_mass * rng.standard_normal(dim)
        log_u = math.log(rng.uniform())
        # divergent trajectories overflow; they end up rejected below
        with np.errstate(over="ignore", invalid="ignore"):
            if dim:
                x1, p1, g1 = leapfrog(x, p0, gradient, eps, config.n_leapfrog, inv_mass, grad_x=g)
                ok = np.all(np.isfinite(g1)) and np.all(np.isfinite(p1))
                lp1 = float(log_density(x1)) if ok else -math.inf
            else:
                x1, p1, g1, lp1, ok = x, p0, g, lp, True
            if ok and math.isfinite(lp1):
                h0 = -lp + 0.5 * np.sum(inv_mass * p0 * p0)
                h1 = -lp1 + 0.5 * np.sum(inv_mass * p1 * p1)
                log_ratio = h0 - h1
                accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
            else:
                log_ratio, accept_prob = -math.inf, 0.0
        accept = math.isfinite(log_ratio) and log_u < log_ratio
        if accept:
            x, lp, g = x1, lp1, g1
        if it < config.n_burnin:
            if adapter is not None:
                eps = adapter.update(accept_prob)
                if it == config.n_burnin - 1:
                    eps = adapter.final
        else:
            k = it - config.n_burnin
            samples[k] = x
            log_dens[k] = lp
            accepted += int(accept)
    return Chain(samples, accepted / config.n_samples, log_dens, eps)


def run_chains(
    log_density: LogDensity,
    gradient: Gradient,
    inits: Sequence[np.ndarray],
    config: HMCConfig,
    workers: int = 1,
) -> list[Chain]:
    """Run one chain per init; chain ``c`` uses seed ``config.seed + c``.

    ``log_density`` and ``gradient`` must tolerate concurrent calls when
    ``workers > 1``.
    """
    configs = [replace(config, seed=config.seed + c) for c in range(len(inits))]
    if workers <= 1:
        return [sample(log_density, gradient, x0, cfg) for x0, cfg in zip(inits, configs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(sample, log_density, gradient, x0, cfg) for x0, cfg in zip(inits, configs)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation of a 1-D series via FFT (biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from autocorrelations summed in pairs until the first negative pair.

    Clamped to ``[1, len(x)]``; a constant series has ESS 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2 or np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    if tau <= 0:
        return float(n)
    return float(min(max(n / tau, 1.0), n))


def split_rhat(chains: Sequence[np.ndarray]) -> float:
    """Split-R-hat of one scalar quantity over several chains."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = c.size // 2
        if h < 2:
            return float("nan")
        halves += [c[:h], c[-h:]]
    h = min(len(s) for s in halves)
    arr = np.array([s[:h] for s in halves])
    w = arr.var(axis=1, ddof=1).mean()
    b = h * arr.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_hat = (h - 1) / h * w + b / h
    return float(math.sqrt(var_hat / w))


@dataclass(frozen=True)
class Diagnostics:
    ess: np.ndarray
    accept_rate: float


def diagnostics(chain: Chain) -> Diagnostics:
    """Per-coordinate effective sample size and acceptance rate."""
    s = np.asarray(chain.samples)
    if s.shape[0] == 0:
        raise ValueError("empty chain")
    ess = np.array([effective_sample_size(s[:, j]) for j in range(s.shape[1])])
    return Diagnostics(ess, float(chain.accept_rate))
