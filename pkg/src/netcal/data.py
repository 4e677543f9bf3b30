"""Observation and dataset containers shared by the GP, model and I/O layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from netcal.kernels import SpaceTimePoint


@dataclass(frozen=True)
class Observation:
    sensor: int
    where: SpaceTimePoint
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite observation value for sensor {self.sensor}")
        if self.sensor < 0:
            raise ValueError(f"negative sensor index {self.sensor}")


@dataclass(frozen=True)
class Truth:
    """Simulation ground truth, aligned row-by-row with ``Dataset.observations``."""

    field: np.ndarray
    weight: np.ndarray
    noise: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Truth):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("field", "weight", "noise")
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations plus sensor roles.

    ``truth`` is kept apart from the observations; nothing in the inference
    path reads it.
    """

    observations: tuple[Observation, ...]
    n_sensors: int
    reference_sensors: frozenset[int]
    truth: Optional[Truth] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "reference_sensors", frozenset(int(s) for s in self.reference_sensors))
        for ob in self.observations:
            if ob.sensor >= self.n_sensors:
                raise IndexError(f"observation sensor {ob.sensor} >= n_sensors {self.n_sensors}")
        for r in self.reference_sensors:
            if not 0 <= r < self.n_sensors:
                raise IndexError(f"reference sensor {r} outside 0..{self.n_sensors - 1}")
        if self.truth is not None and len(self.truth.field) != len(self.observations):
            raise ValueError("truth must align with observations")

    def __len__(self) -> int:
        return len(self.observations)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.observations == other.observations
            and self.n_sensors == other.n_sensors
            and self.reference_sensors == other.reference_sensors
        )

    @classmethod
    def from_arrays(cls, sensor, points, values, n_sensors=None, reference_sensors=(0,), truth=None):
        sensor = np.asarray(sensor, dtype=int)
        points = np.asarray(points, dtype=float)
        values = np.asarray(values, dtype=float)
        obs = tuple(
            Observation(int(s), SpaceTimePoint(*map(float, p)), float(v))
            for s, p, v in zip(sensor, points, values)
        )
        if n_sensors is None:
            n_sensors = int(sensor.max()) + 1 if sensor.size else 0
        return cls(obs, n_sensors, frozenset(reference_sensors), truth)

    @cached_property
    def sensor(self) -> np.ndarray:
        return _readonly(np.array([o.sensor for o in self.observations], dtype=int))

    @cached_property
    def points(self) -> np.ndarray:
        """Space-time coordinates as an ``(n, 3)`` array of (x, y, t)."""
        pts = np.array([o.where.as_tuple() for o in self.observations], dtype=float)
        return _readonly(pts.reshape(-1, 3))

    @cached_property
    def values(self) -> np.ndarray:
        return _readonly(np.array([o.value for o in self.observations], dtype=float))

    @property
    def times(self) -> np.ndarray:
        return self.points[:, 2]

    def is_reference(self) -> np.ndarray:
        refs = self.reference_sensors
        return np.array([o.sensor in refs for o in self.observations], dtype=bool)

    def sensors_present(self) -> list[int]:
        return sorted({o.sensor for o in self.observations})

    def without_truth(self) -> "Dataset":
        return Dataset(self.observations, self.n_sensors, self.reference_sensors)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr
