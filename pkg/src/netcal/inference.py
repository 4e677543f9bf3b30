"""End-to-end posterior sampling of calibration weights.

HMC runs on whitened coordinates ``u`` with ``z = z_map + S u``, where
``S S^T`` is the inverse Hessian of the negative log joint at its mode. The
map is affine, so the target in ``u`` is the same posterior up to a
constant; chains are mapped back to ``z`` before they are returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from netcal.data import Dataset
from netcal.gp import NoiseModel
from netcal.hmc import Chain, HMCConfig, InitializationError, diagnostics, run_chains, split_rhat
from netcal.kernels import KernelParams
from netcal.model import CalibrationModel, Standardization, WeightPrior

log = logging.getLogger(__name__)


@dataclass
class CalibrationResult:
    model: CalibrationModel
    standardization: Standardization
    chains: list[Chain]
    z_map: np.ndarray
    whitening: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def layout(self):
        return self.model.layout

    def pooled(self) -> np.ndarray:
        return np.concatenate([c.samples for c in self.chains], axis=0)


def find_map(model: CalibrationModel, z0: Optional[np.ndarray] = None, maxiter: int = 5000) -> np.ndarray:
    """Mode of the log joint by L-BFGS, started from the prior mean by default."""
    z0 = model.prior_mean_state() if z0 is None else np.asarray(z0, dtype=float)
    if model.dim == 0:
        return z0

    def fun(z):
        v, g = model.value_and_grad(z)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(z)
        return -v, -g

    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-9})
    if not np.isfinite(res.fun):
        raise InitializationError("could not find a finite mode of the log joint")
    return res.x


def neg_hessian(model: CalibrationModel, z: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Negative Hessian of the log joint by central differences of the analytic gradient."""
    d = z.size
    H = np.empty((d, d))
    for j in range(d):
        h = rel_step * max(1.0, abs(z[j]))
        e = np.zeros(d)
        e[j] = h
        H[:, j] = -(model.grad_log_joint(z + e) - model.grad_log_joint(z - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def whitening_matrix(H: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """``S`` with ``S S^T = H^{-1}``; eigenvalues below ``floor * max`` are raised to it."""
    if H.size == 0:
        return np.zeros((0, 0))
    lam, V = np.linalg.eigh(H)
    top = max(float(lam.max()), 1e-300)
    lam = np.maximum(lam, floor * top)
    return V / np.sqrt(lam)


def calibrate(
    data: Dataset,
    prior: WeightPrior,
    theta_y: KernelParams,
    noise: NoiseModel,
    hmc: HMCConfig,
    n_chains: int = 4,
    field_mean: Optional[float] = None,
    init_jitter: float = 0.5,
    whiten: bool = True,
    workers: int = 1,
) -> CalibrationResult:
    """Standardize ``data``, locate the mode, then run ``n_chains`` HMC chains.

    Parameters
    ----------
    theta_y, noise : KernelParams, NoiseModel
        Field kernel and noise in standardized units (readings divided by the
        reference standard deviation).
    field_mean : float, optional
        Field prior mean in standardized units; defaults to the reference mean.
    init_jitter : float
        Standard deviation of the per-chain offsets from the mode, in
        whitened units.
    """
    if not data.reference_sensors & set(data.sensors_present()):
        raise ValueError("dataset has no observations from a reference sensor")
    std = Standardization.from_data(data)
    m0 = std.field_mean if field_mean is None else float(field_mean)
    model = CalibrationModel(std.apply(data), prior, theta_y, noise, m0)
    d = model.dim
    if d == 0:
        empty = [Chain(np.zeros((hmc.n_samples, 0)), 1.0, np.full(hmc.n_samples, model.log_joint(np.zeros(0))))
                 for _ in range(n_chains)]
        return CalibrationResult(model, std, empty, np.zeros(0), np.zeros((0, 0)), {"dim": 0})

    z_map = find_map(model)
    S = whitening_matrix(neg_hessian(model, z_map)) if whiten else np.eye(d)

    def to_z(u):
        return z_map + S @ u

    def log_density(u):
        return model.log_joint(to_z(u))

    def gradient(u):
        return S.T @ model.grad_log_joint(to_z(u))

    inits = []
    for c in range(n_chains):
        rng = np.random.default_rng([hmc.seed + c, 7919])
        inits.append(init_jitter * rng.standard_normal(d))
    raw = run_chains(log_density, gradient, inits, hmc, workers=workers)
    chains = [
        Chain(z_map + c.samples @ S.T, c.accept_rate, c.log_densities, c.step_size) for c in raw
    ]
    info = {
        "dim": d,
        "accept_rate": [c.accept_rate for c in chains],
        "min_ess": float(min(diagnostics(c).ess.min() for c in raw)),
        "max_rhat": float(max(split_rhat([c.samples[:, j] for c in raw]) for j in range(d))),
    }
    log.info("sampled %d chains: accept %s, min ESS %.0f", n_chains, info["accept_rate"], info["min_ess"])
    return CalibrationResult(model, std, chains, z_map, S, info)
