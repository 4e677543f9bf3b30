"""Covariance construction: EQ kernels over space-time and rank-1 coregionalization.

The EQ kernel uses the half factor in the exponent,

    k(p, q) = variance * exp(-0.5 * sum_d ((p_d - q_d) / l_d) ** 2),

with one lengthscale per active dimension. Points are passed either as a
sequence of :class:`SpaceTimePoint` (three dimensions: x, y, t) or as an
``(n, d)`` array; 1-D arrays are read as ``n`` scalar points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

#: relative diagonal stabilizer added before factorizing square Gram matrices
JITTER = 1e-8


class ParameterError(ValueError):
    """Invalid kernel hyperparameters or point dimensionality."""


@dataclass(frozen=True)
class SpaceTimePoint:
    x: float
    y: float
    t: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.t)):
            raise ParameterError(f"non-finite coordinate in {self!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.t)


@dataclass(frozen=True)
class KernelParams:
    """EQ kernel hyperparameters: signal variance and one lengthscale per dimension."""

    variance: float
    lengthscales: tuple[float, ...]

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ParameterError(f"kernel variance must be positive, got {self.variance}")
        if not ls:
            raise ParameterError("at least one lengthscale is required")
        if not all(math.isfinite(v) and v > 0 for v in ls):
            raise ParameterError(f"lengthscales must be positive, got {ls}")

    @property
    def ndim(self) -> int:
        return len(self.lengthscales)


@dataclass(frozen=True)
class CoregWeights:
    """Per-sensor coregionalization scalars with the reference entry pinned to 1."""

    a: np.ndarray
    reference: int = 0

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if not 0 <= self.reference < a.size:
            raise IndexError(f"reference index {self.reference} outside 0..{a.size - 1}")
        if a[self.reference] != 1.0:
            raise ParameterError("the reference weight must be exactly 1")
        if not np.all(np.isfinite(a)):
            raise ParameterError("coregionalization weights must be finite")

    def __len__(self) -> int:
        return self.a.size


Points = Union[Sequence[SpaceTimePoint], np.ndarray]


def as_array(points: Points) -> np.ndarray:
    """Convert points to a float ``(n, d)`` array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        pts = list(points)
        if pts and isinstance(pts[0], SpaceTimePoint):
            arr = np.array([p.as_tuple() for p in pts], dtype=float)
        else:
            arr = np.asarray(pts, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ParameterError(f"points must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def _check_dims(arr: np.ndarray, params: KernelParams) -> None:
    if arr.shape[1] != params.ndim:
        raise ParameterError(
            f"points have {arr.shape[1]} dimensions but {params.ndim} lengthscales were given"
        )


def scaled_differences(P: Points, Q: Points, params: KernelParams) -> np.ndarray:
    """Per-dimension differences divided by lengthscale, shape ``(|P|, |Q|, d)``."""
    p, q = as_array(P), as_array(Q)
    _check_dims(p, params)
    _check_dims(q, params)
    ls = np.asarray(params.lengthscales)
    return (p[:, None, :] - q[None, :, :]) / ls


def eq_kernel(P: Points, Q: Points, params: KernelParams) -> np.ndarray:
    """Exponentiated-quadratic cross-covariance between two point sets."""
    p, q = as_array(P), as_array(Q)
    _check_dims(p, params)
    _check_dims(q, params)
    ls = np.asarray(params.lengthscales)
    ps, qs = p / ls, q / ls
    # expand |a-b|^2 only for large sets; the direct form is exact at zero distance
    if p.shape[0] * q.shape[0] * p.shape[1] <= 4_000_000:
        d2 = np.sum((ps[:, None, :] - qs[None, :, :]) ** 2, axis=-1)
    else:
        d2 = (
            np.sum(ps**2, 1)[:, None] + np.sum(qs**2, 1)[None, :] - 2.0 * ps @ qs.T
        )
        np.maximum(d2, 0.0, out=d2)
    return params.variance * np.exp(-0.5 * d2)


def coreg_matrix(a: CoregWeights | np.ndarray) -> np.ndarray:
    """Rank-1 coregionalization matrix ``a a^T``."""
    vec = a.a if isinstance(a, CoregWeights) else np.asarray(a, dtype=float).reshape(-1)
    return np.outer(vec, vec)


def expand_coreg(a: CoregWeights | np.ndarray, sensor_of: Sequence[int]) -> np.ndarray:
    """Coregionalization matrix indexed by the sensor of each observation."""
    vec = a.a if isinstance(a, CoregWeights) else np.asarray(a, dtype=float).reshape(-1)
    idx = np.asarray(sensor_of, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= vec.size):
        raise IndexError(f"sensor index outside 0..{vec.size - 1}")
    per_obs = vec[idx]
    return np.outer(per_obs, per_obs)


def combined_covariance(
    points: Points,
    sensor_of: Sequence[int],
    params: KernelParams,
    a: CoregWeights | np.ndarray,
) -> np.ndarray:
    """Element-wise product of the EQ Gram matrix and the sensor-expanded coregionalization."""
    pts = as_array(points)
    if pts.shape[0] != len(sensor_of):
        raise ParameterError(f"{pts.shape[0]} points but {len(sensor_of)} sensor labels")
    return eq_kernel(pts, pts, params) * expand_coreg(a, sensor_of)
