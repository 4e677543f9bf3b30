"""Run configuration: TOML files validated against a versioned schema.

Field-GP and noise parameters are in standardized units, i.e. readings
divided by the standard deviation of the reference sensor's readings. The
weight prior is unitless.
"""

from __future__ import annotations

import hashlib
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from netcal.gp import NoiseModel
from netcal.hmc import HMCConfig
from netcal.kernels import KernelParams
from netcal.model import GaussianWeightPrior, SparseWeightPrior
from netcal.simulate import FieldSpec, ScenarioConfig, default_scenario

SCHEMA_VERSION = 1
BUILTIN = ("two_sensor", "network", "clogging")


class ConfigError(ValueError):
    """Invalid configuration file; the message lists every offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FieldTruth(_Strict):
    mode: Optional[Literal["function", "gp"]] = None
    level: Optional[float] = None
    amplitude: Optional[float] = None
    period: Optional[float] = Field(default=None, gt=0)
    spatial: Optional[bool] = None
    variance: Optional[float] = Field(default=None, gt=0)
    lengthscales: Optional[tuple[float, float, float]] = None
    band: Optional[tuple[float, float]] = None


class Scenario(_Strict):
    kind: Literal["two_sensor", "network", "clogging"]
    field: FieldTruth = FieldTruth()
    noise_fraction: Optional[float] = Field(default=None, ge=0)
    noise_variance: Optional[float] = Field(default=None, ge=0)
    weights: Optional[dict[int, float]] = None
    cadence: Optional[float] = Field(default=None, gt=0)
    span: Optional[tuple[float, float]] = None
    opc_speed: Optional[float] = Field(default=None, ge=0)
    sites: Optional[dict[int, tuple[float, float]]] = None
    routes: Optional[dict[int, list[tuple[float, float, float]]]] = None
    max_speed: Optional[float] = Field(default=None, gt=0)
    decay_rate: Optional[float] = Field(default=None, ge=0)
    maintenance_time: Optional[float] = None

    @field_validator("span")
    @classmethod
    def _span(cls, v):
        if v is not None and not v[1] > v[0]:
            raise ValueError("span must be [start, end] with end > start")
        return v

    def build(self, seed: int) -> ScenarioConfig:
        base = default_scenario(self.kind, seed)
        over = self.model_dump(exclude_none=True, exclude={"kind", "field"})
        if "routes" in over:
            over["routes"] = {k: tuple(map(tuple, v)) for k, v in over["routes"].items()}
        field_over = self.field.model_dump(exclude_none=True)
        field = FieldSpec(**{**base.field.__dict__, **field_over})
        kw = {**base.__dict__, **over, "field": field, "seed": seed}
        return ScenarioConfig(**kw)


class Data(_Strict):
    path: str


class FieldModel(_Strict):
    variance: float = Field(default=1.0, gt=0)
    lengthscales: tuple[float, float, float] = (2.0, 2.0, 1.0)
    mean: Union[float, Literal["reference"]] = "reference"

    @field_validator("lengthscales")
    @classmethod
    def _positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("lengthscales must be positive")
        return v

    def kernel(self) -> KernelParams:
        return KernelParams(self.variance, self.lengthscales)


class Noise(_Strict):
    variance: float = Field(default=0.01, ge=0)


class Weights(_Strict):
    prior: Literal["sparse_gp", "gaussian"] = "gaussian"
    mean: float = 1.0
    variance: float = Field(default=25.0, gt=0)
    lengthscale: float = Field(default=4.0, gt=0)
    spacing: Optional[float] = Field(default=None, gt=0)
    jitter: float = Field(default=1e-8, ge=0)

    def build(self):
        if self.prior == "gaussian":
            return GaussianWeightPrior(self.mean, self.variance)
        return SparseWeightPrior(
            KernelParams(self.variance, (self.lengthscale,)),
            mean=self.mean,
            jitter=self.jitter,
            spacing=self.spacing,
        )


class Sampler(_Strict):
    step_size: float = Field(default=0.3, gt=0)
    n_leapfrog: int = Field(default=10, ge=1)
    n_samples: int = Field(default=1000, ge=1)
    n_burnin: int = Field(default=300, ge=0)
    n_chains: int = Field(default=4, ge=1)
    adapt_step_size: bool = False
    target_accept: float = Field(default=0.8, gt=0, lt=1)
    init_jitter: float = Field(default=0.5, ge=0)
    whiten: bool = True
    thin: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)

    def build(self, seed: int) -> HMCConfig:
        return HMCConfig(
            step_size=self.step_size,
            n_leapfrog=self.n_leapfrog,
            n_samples=self.n_samples,
            n_burnin=self.n_burnin,
            seed=seed,
            adapt_step_size=self.adapt_step_size,
            target_accept=self.target_accept,
        )


class Predict(_Strict):
    points: Optional[list[tuple[float, float, float]]] = None
    x: Optional[list[float]] = None
    y: Optional[list[float]] = None
    t: Optional[list[float]] = None
    max_samples: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def _one_grid(self):
        axes = [self.x, self.y, self.t]
        if self.points is not None and any(a is not None for a in axes):
            raise ValueError("give either explicit points or x/y/t axes, not both")
        if any(a is not None for a in axes) and not all(a is not None for a in axes):
            raise ValueError("grid axes x, y and t must all be given")
        return self

    def query(self):
        """Explicit ``(n, 3)`` query list, or None to use the observation locations."""
        if self.points is not None:
            return [tuple(p) for p in self.points]
        if self.x is not None:
            return [(a, b, c) for a in self.x for b in self.y for c in self.t]
        return None


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    scenario: Optional[Scenario] = None
    data: Optional[Data] = None
    field: FieldModel = FieldModel()
    noise: Noise = Noise()
    weights: Weights = Weights()
    hmc: Sampler = Sampler()
    predict: Predict = Predict()
    output: Optional[str] = None

    @model_validator(mode="after")
    def _source(self):
        if self.scenario is not None and self.data is not None:
            raise ValueError("give exactly one of [scenario] or [data], not both")
        return self

    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.noise.variance)

    def scenario_config(self) -> ScenarioConfig:
        if self.scenario is None:
            raise ConfigError("config has no [scenario] section")
        return self.scenario.build(self.seed)

    def digest(self) -> str:
        """SHA-256 of the fully-resolved config (defaults included)."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, n_chains: Optional[int] = None) -> "RunConfig":
        upd = {}
        if seed is not None:
            upd["seed"] = seed
        if n_chains is not None:
            upd["hmc"] = self.hmc.model_copy(update={"n_chains": n_chains})
        return self.model_copy(update=upd)


def _format_errors(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  field {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None


def builtin_config_text(name: str) -> str:
    return resources.files("netcal.configs").joinpath(f"{name}.toml").read_text()


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a TOML config; a bare builtin name (``two_sensor``, ...) loads the shipped file."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN:
        return parse_config(builtin_config_text(str(path)), f"builtin:{path}")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
