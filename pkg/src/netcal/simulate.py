"""Synthetic sensor-network scenarios with recorded ground truth.

Three scenarios:

``two_sensor``
    A static reference and one biased OPC, co-located over ``[-1, 0]``; the
    OPC then drives away. The true field depends on time only, so both
    locations always see the same true value.
``network``
    Seven sensors: reference 0, mobile calibrators 1 and 2, static low-cost
    units 3-6 on a 10 x 10 km layout. Mobile 2 covers sites 3 and 4 and
    spends most of its time at the reference; mobile 1 covers 5 and 6.
``clogging``
    A reference and a co-located unit whose weight decays as dust builds up
    and jumps back to its initial value at a maintenance visit.

Every reading is ``true_weight * true_field + noise``, with the field and
the noise drawn from separate seeded streams so regenerating a scenario is
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from typing import Mapping, Optional, Sequence

import numpy as np

from netcal.data import Dataset, Observation, Truth
from netcal.gp import cholesky
from netcal.kernels import KernelParams, SpaceTimePoint, eq_kernel

KINDS = ("two_sensor", "network", "clogging")

# independent generator streams per seed
_FIELD_STREAM = 1
_NOISE_STREAM = 2


class ScenarioError(ValueError):
    """Scenario configuration is inconsistent."""


@dataclass(frozen=True)
class FieldSpec:
    """True pollution field.

    ``mode="function"`` is a smooth deterministic surface around ``level``;
    ``mode="gp"`` is a seeded draw from an EQ-kernel GP with mean ``level``.
    If ``band`` is set the field is squashed into it with a logistic map.
    """

    mode: str = "function"
    level: float = 25.0
    amplitude: float = 6.0
    period: float = 7.0
    spatial: bool = True
    variance: float = 36.0
    lengthscales: tuple[float, float, float] = (2.0, 2.0, 3.0)
    band: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in ("function", "gp"):
            raise ScenarioError(f"unknown field mode {self.mode!r}")
        if self.band is not None and not self.band[0] < self.band[1]:
            raise ScenarioError("field band must satisfy low < high")


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear path through space-time waypoints."""

    waypoints: tuple[SpaceTimePoint, ...]

    def __post_init__(self):
        wp = tuple(self.waypoints)
        object.__setattr__(self, "waypoints", wp)
        if not wp:
            raise ScenarioError("trajectory needs at least one waypoint")
        t = [p.t for p in wp]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ScenarioError("waypoint times must be strictly increasing")

    @classmethod
    def through(cls, stops: Sequence[tuple[float, float, float]]) -> "Trajectory":
        return cls(tuple(SpaceTimePoint(*map(float, s)) for s in stops))

    def position(self, t) -> np.ndarray:
        """``(n, 2)`` positions; clamped to the end waypoints outside their time range."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        wt = np.array([p.t for p in self.waypoints])
        wx = np.array([p.x for p in self.waypoints])
        wy = np.array([p.y for p in self.waypoints])
        return np.column_stack([np.interp(t, wt, wx), np.interp(t, wt, wy)])

    def max_speed(self) -> float:
        wp = self.waypoints
        speeds = [
            math.hypot(b.x - a.x, b.y - a.y) / (b.t - a.t) for a, b in zip(wp, wp[1:])
        ]
        return max(speeds, default=0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    seed: int = 0
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    noise_fraction: float = 0.02
    noise_variance: Optional[float] = None
    weights: Mapping[int, float] = dc_field(default_factory=dict)
    cadence: float = 4.0
    span: tuple[float, float] = (-1.0, 10.0)
    # two_sensor
    opc_speed: float = 0.5
    # network
    sites: Mapping[int, tuple[float, float]] = dc_field(default_factory=dict)
    routes: Mapping[int, tuple[tuple[float, float, float], ...]] = dc_field(default_factory=dict)
    max_speed: float = 8.0
    # clogging
    decay_rate: float = 0.01
    maintenance_time: float = 90.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not self.span[1] > self.span[0]:
            raise ScenarioError("time span must be positive")
        if not self.cadence > 0:
            raise ScenarioError("cadence must be positive")
        if self.noise_variance is not None and self.noise_variance < 0:
            raise ScenarioError("noise variance must be >= 0")
        object.__setattr__(self, "weights", {int(k): float(v) for k, v in dict(self.weights).items()})

    @property
    def noise_std(self) -> float:
        if self.noise_variance is not None:
            return math.sqrt(self.noise_variance)
        return self.noise_fraction * self.field.level

    def sample_times(self) -> np.ndarray:
        t0, t1 = self.span
        n = int(math.floor((t1 - t0) * self.cadence + 1e-9)) + 1
        return t0 + np.arange(n) / self.cadence


NETWORK_SITES = {0: (5.0, 5.0), 3: (2.0, 8.0), 4: (8.0, 8.0), 5: (2.0, 2.0), 6: (8.0, 2.0)}


def _network_routes(sites) -> dict[int, tuple]:
    s = sites
    return {
        1: (
            (*s[0], 0.0), (*s[0], 2.0),
            (*s[5], 3.0), (*s[5], 10.0),
            (*s[6], 11.0), (*s[6], 24.0),
        ),
        2: (
            (*s[0], 0.0), (*s[0], 6.0),
            (*s[3], 7.0), (*s[3], 11.0),
            (*s[4], 12.0), (*s[4], 16.0),
            (*s[0], 17.0), (*s[0], 24.0),
        ),
    }


def default_scenario(kind: str, seed: int = 0) -> ScenarioConfig:
    """Versioned defaults for each scenario kind."""
    if kind == "two_sensor":
        return ScenarioConfig(
            kind="two_sensor",
            seed=seed,
            field=FieldSpec(mode="function", level=25.0, amplitude=12.0, period=7.0, spatial=False),
            weights={1: 3.0},
            cadence=4.0,
            span=(-1.0, 10.0),
            opc_speed=0.5,
        )
    if kind == "network":
        return ScenarioConfig(
            kind="network",
            seed=seed,
            field=FieldSpec(mode="gp", level=25.0, variance=36.0, lengthscales=(2.0, 2.0, 3.0)),
            weights={1: 1.6, 2: 0.7, 3: 2.2, 4: 1.3, 5: 0.6, 6: 2.5},
            cadence=1.0,
            span=(0.0, 24.0),
            sites=dict(NETWORK_SITES),
            routes=_network_routes(NETWORK_SITES),
            max_speed=8.0,
        )
    if kind == "clogging":
        return ScenarioConfig(
            kind="clogging",
            seed=seed,
            field=FieldSpec(mode="function", level=25.0, amplitude=9.0, period=17.0, spatial=False, band=(10.0, 40.0)),
            weights={1: 1.0},
            cadence=1.0,
            span=(0.0, 120.0),
            decay_rate=0.01,
            maintenance_time=90.0,
        )
    raise ScenarioError(f"unknown scenario kind {kind!r}")


# ---------------------------------------------------------------------------
# true field and weights
# ---------------------------------------------------------------------------


def sample_true_field(config: ScenarioConfig, points) -> np.ndarray:
    """True field at ``(n, 3)`` space-time points (x, y, t)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    spec = config.field
    if spec.mode == "function":
        x, y, t = pts[:, 0], pts[:, 1], pts[:, 2]
        phase = 2.0 * math.pi * t / spec.period
        f = spec.level + spec.amplitude * np.sin(phase) + 0.35 * spec.amplitude * np.sin(2.7 * phase + 1.0)
        if spec.spatial:
            f = f + 0.5 * spec.amplitude * np.sin(0.6 * x + 0.2 * t) * np.cos(0.4 * y)
    else:
        kp = KernelParams(spec.variance, spec.lengthscales)
        K = eq_kernel(pts, pts, kp)
        L, _ = cholesky(K, jitter=1e-8 * spec.variance)
        rng = np.random.default_rng([config.seed, _FIELD_STREAM])
        f = spec.level + L @ rng.standard_normal(pts.shape[0])
    if spec.band is not None:
        lo, hi = spec.band
        width = hi - lo
        f = lo + width / (1.0 + np.exp(-4.0 * (f - 0.5 * (lo + hi)) / width))
    return f


def clogging_weight(config: ScenarioConfig, t) -> np.ndarray:
    """Exponential dust decay from the initial weight, reset at maintenance."""
    t = np.asarray(t, dtype=float)
    w0 = config.weights.get(1, 1.0)
    since = np.where(t < config.maintenance_time, t - config.span[0], t - config.maintenance_time)
    return w0 * np.exp(-config.decay_rate * since)


def true_weight(config: ScenarioConfig, sensor: int, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if sensor == 0:
        return np.ones_like(t)
    if config.kind == "clogging":
        return clogging_weight(config, t)
    return np.full_like(t, config.weights.get(sensor, 1.0))


# ---------------------------------------------------------------------------
# scenario layouts
# ---------------------------------------------------------------------------


def _two_sensor_layout(config: ScenarioConfig):
    t = config.sample_times()
    rows = [(0, np.zeros_like(t), np.zeros_like(t), t)]
    opc_x = config.opc_speed * np.maximum(t, 0.0)
    rows.append((1, opc_x, np.zeros_like(t), t))
    return rows, 2


def network_trajectories(config: ScenarioConfig) -> dict[int, Trajectory]:
    trajs = {m: Trajectory.through(stops) for m, stops in config.routes.items()}
    for m, tr in trajs.items():
        if tr.max_speed() > config.max_speed + 1e-12:
            raise ScenarioError(
                f"mobile sensor {m} route needs {tr.max_speed():.3g} km per time unit, above max_speed {config.max_speed}"
            )
    return trajs


def _network_layout(config: ScenarioConfig):
    t = config.sample_times()
    if 0 not in config.sites:
        raise ScenarioError("network scenario needs a site for reference sensor 0")
    rows = []
    trajs = network_trajectories(config)
    sensors = sorted(set(config.sites) | set(trajs))
    for s in sensors:
        if s in trajs:
            pos = trajs[s].position(t)
        else:
            pos = np.tile(np.asarray(config.sites[s], dtype=float), (t.size, 1))
        rows.append((s, pos[:, 0], pos[:, 1], t))
    return rows, max(sensors) + 1


def _clogging_layout(config: ScenarioConfig):
    t = config.sample_times()
    z = np.zeros_like(t)
    return [(0, z, z, t), (1, z.copy(), z.copy(), t)], 2


_LAYOUTS = {"two_sensor": _two_sensor_layout, "network": _network_layout, "clogging": _clogging_layout}


def generate(config: ScenarioConfig) -> Dataset:
    """Build the scenario's Dataset with truth attached."""
    rows, n_sensors = _LAYOUTS[config.kind](config)
    sensor = np.concatenate([np.full(r[3].size, r[0]) for r in rows])
    pts = np.column_stack([np.concatenate([r[i] for r in rows]) for i in (1, 2, 3)])
    f = sample_true_field(config, pts)
    w = np.concatenate([true_weight(config, r[0], r[3]) for r in rows])
    noise = noise_draws(config, sensor.size)
    values = w * f + noise
    obs = tuple(
        Observation(int(s), SpaceTimePoint(float(p[0]), float(p[1]), float(p[2])), float(v))
        for s, p, v in zip(sensor, pts, values)
    )
    return Dataset(obs, n_sensors, frozenset({0}), Truth(f, w, noise))


def noise_draws(config: ScenarioConfig, n: int) -> np.ndarray:
    """The additive noise of a scenario's ``n`` readings, from its dedicated stream."""
    rng = np.random.default_rng([config.seed, _NOISE_STREAM])
    return config.noise_std * rng.standard_normal(n)


def gen_two_sensor(config: ScenarioConfig) -> Dataset:
    if config.kind != "two_sensor":
        raise ScenarioError(f"expected a two_sensor config, got {config.kind!r}")
    return generate(config)


def gen_network(config: ScenarioConfig) -> Dataset:
    if config.kind != "network":
        raise ScenarioError(f"expected a network config, got {config.kind!r}")
    return generate(config)


def gen_clogging(config: ScenarioConfig) -> Dataset:
    if config.kind != "clogging":
        raise ScenarioError(f"expected a clogging config, got {config.kind!r}")
    return generate(config)


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **kw)
