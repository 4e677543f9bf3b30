"""Probabilistic calibration of low-cost sensor networks.

Sensors are modelled as scaled views ``y = w_i(t) f(x, t) + noise`` of a
shared spatio-temporal Gaussian process ``f``. Per-sensor calibration
weights ``w_i`` get either a static Gaussian prior or a sparse GP prior over
time, and their posterior is sampled with Hamiltonian Monte Carlo.
"""

from netcal.kernels import (
    CoregWeights,
    KernelParams,
    ParameterError,
    SpaceTimePoint,
    coreg_matrix,
    combined_covariance,
    eq_kernel,
)
from netcal.gp import (
    FitError,
    GPPosterior,
    NoiseModel,
    NumericalError,
    log_marginal_likelihood,
    ml_fit_coreg,
    posterior,
)
from netcal.model import (
    CalibrationModel,
    Dataset,
    GaussianWeightPrior,
    Observation,
    SparseWeightPrior,
    grad_log_joint,
    log_joint,
    posterior_summary,
    predict_field,
    weight_at,
)
from netcal.hmc import Chain, HMCConfig, diagnostics, sample

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel",
    "Chain",
    "CoregWeights",
    "Dataset",
    "FitError",
    "GPPosterior",
    "GaussianWeightPrior",
    "HMCConfig",
    "KernelParams",
    "NoiseModel",
    "NumericalError",
    "Observation",
    "ParameterError",
    "SpaceTimePoint",
    "SparseWeightPrior",
    "coreg_matrix",
    "combined_covariance",
    "diagnostics",
    "eq_kernel",
    "grad_log_joint",
    "log_joint",
    "log_marginal_likelihood",
    "ml_fit_coreg",
    "posterior",
    "posterior_summary",
    "predict_field",
    "sample",
    "weight_at",
]
