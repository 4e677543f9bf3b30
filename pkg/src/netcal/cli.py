"""``netcal`` command line: simulate, calibrate, predict.

Exit codes: 0 success, 2 config or input format error, 3 no reference
sensor, 4 sampler initialization failure, 5 chains do not match the data.
Set ``NETCAL_LOG`` (e.g. ``INFO``, ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from netcal import __version__
from netcal import io
from netcal.config import ConfigError, RunConfig, load_config
from netcal.data import Dataset
from netcal.hmc import InitializationError
from netcal.inference import CalibrationResult, calibrate
from netcal.model import CalibrationModel, GaussianWeightPrior, Standardization, posterior_summary
from netcal.simulate import ScenarioError, generate

log = logging.getLogger("netcal")

EXIT_OK, EXIT_CONFIG, EXIT_NO_REFERENCE, EXIT_INIT, EXIT_MISMATCH = 0, 2, 3, 4, 5


class NoReferenceError(ValueError):
    pass


class ArtifactMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# commands as plain functions
# ---------------------------------------------------------------------------


def simulate(cfg: RunConfig, out: Path) -> Dataset:
    """Write observations.csv, truth.csv and manifest.json for the config's scenario."""
    scenario = cfg.scenario_config()
    data = generate(scenario)
    out.mkdir(parents=True, exist_ok=True)
    io.write_observations(out / "observations.csv", data)
    io.write_truth(out / "truth.csv", data)
    io.write_json(
        out / "manifest.json",
        {
            "command": "simulate",
            "scenario": scenario.kind,
            "seed": cfg.seed,
            "config_hash": cfg.digest(),
            "schema_version": cfg.schema_version,
            "netcal_version": __version__,
            "n_observations": len(data),
            "n_sensors": data.n_sensors,
            "reference_sensors": sorted(data.reference_sensors),
        },
    )
    log.info("simulated %s: %d readings -> %s", scenario.kind, len(data), out)
    return data


def run_calibration(cfg: RunConfig, data: Dataset) -> CalibrationResult:
    if not data.reference_sensors & set(data.sensors_present()):
        raise NoReferenceError("data has no observations from a reference sensor")
    field_mean = None if cfg.field.mean == "reference" else float(cfg.field.mean)
    return calibrate(
        data,
        cfg.weights.build(),
        cfg.field.kernel(),
        cfg.noise_model(),
        cfg.hmc.build(cfg.seed),
        n_chains=cfg.hmc.n_chains,
        field_mean=field_mean,
        init_jitter=cfg.hmc.init_jitter,
        whiten=cfg.hmc.whiten,
        workers=cfg.hmc.workers,
    )


def weight_rows(result: CalibrationResult):
    """Rows of weight_summary.csv: per sensor, per observation time (sparse) or one row (Gaussian)."""
    model = result.model
    static = isinstance(model.prior, GaussianWeightPrior)
    sensor, times = model.data.sensor, model.data.times
    for s in model.layout.sensors:
        ts = np.array([np.nan]) if static else np.unique(times[sensor == s])
        query = np.zeros(1) if static else ts
        summ = posterior_summary(result.chains, model.weight_extractor(s, query))
        for i, t in enumerate(ts):
            yield (s, None if static else t, summ.median[i], summ.lower[i], summ.upper[i],
                   summ.std[i], summ.ci_low[i], summ.ci_high[i])


def calibrate_command(cfg: RunConfig, data: Dataset, out: Path) -> CalibrationResult:
    """Sample weight posteriors; write chains.csv, weight_summary.csv and summary.json."""
    result = run_calibration(cfg, data)
    out.mkdir(parents=True, exist_ok=True)
    io.write_chains(out / "chains.csv", result.chains, result.layout, thin=cfg.hmc.thin)
    rows = list(weight_rows(result))
    io.write_rows(out / "weight_summary.csv", io.WEIGHT_SUMMARY_COLUMNS, rows)
    sensors = {}
    for s in result.layout.sensors:
        mine = [r for r in rows if r[0] == s]
        med = np.array([r[2] for r in mine])
        sd = np.array([r[5] for r in mine])
        sensors[str(s)] = {
            "median": float(np.median(med)),
            "sd_min": float(sd.min()),
            "sd_max": float(sd.max()),
            "negative_mass": float(np.mean(result.pooled()[:, result.layout.block(s)] < 0)),
        }
    io.write_json(
        out / "summary.json",
        {
            "command": "calibrate",
            "config_hash": cfg.digest(),
            "seed": cfg.seed,
            "n_observations": len(data),
            "n_chains": len(result.chains),
            "n_samples": cfg.hmc.n_samples,
            "standardization": {"loc": result.standardization.loc, "scale": result.standardization.scale},
            "field_mean": result.model.field_mean,
            "weights": sensors,
            "diagnostics": result.info,
        },
    )
    log.info("calibrated %d latent weights -> %s", result.model.dim, out)
    return result


def _mixture_median(mu: np.ndarray, sd: np.ndarray, iters: int = 80) -> np.ndarray:
    """Pointwise median of an equal-weight Gaussian mixture (rows are components)."""
    sd = np.maximum(sd, 1e-12 * np.maximum(np.abs(mu).max(axis=0), 1.0))
    lo = (mu - 10 * sd).min(axis=0)
    hi = (mu + 10 * sd).max(axis=0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cdf = stats.norm.cdf((mid - mu) / sd).mean(axis=0)
        below = cdf < 0.5
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def predict_command(cfg: RunConfig, data: Dataset, chains_path: Path, out: Path) -> np.ndarray:
    """Pool field posteriors over weight samples; write field_posterior.csv."""
    if not data.reference_sensors & set(data.sensors_present()):
        raise NoReferenceError("data has no observations from a reference sensor")
    parsed = io.read_chains(chains_path)
    std = Standardization.from_data(data)
    field_mean = std.field_mean if cfg.field.mean == "reference" else float(cfg.field.mean)
    model = CalibrationModel(std.apply(data), cfg.weights.build(), cfg.field.kernel(), cfg.noise_model(), field_mean)
    expected = [(s, k) for _, s, k in model.layout.entries()]
    if parsed["entries"] != expected:
        raise ArtifactMismatch(
            f"chains cover latent entries {parsed['entries'][:6]}..., the dataset/config implies {expected[:6]}..."
        )
    if model.dim == 0:
        pooled = np.zeros((1, 0))
    else:
        if not parsed["samples"]:
            raise ArtifactMismatch("chains file holds no samples")
        pooled = np.concatenate(list(parsed["samples"].values()), axis=0)
    take = np.unique(np.linspace(0, pooled.shape[0] - 1, min(cfg.predict.max_samples, pooled.shape[0])).round().astype(int))
    query = cfg.predict.query()
    if query is None:
        query = np.unique(data.points, axis=0)
    q = np.asarray(query, dtype=float).reshape(-1, 3)
    mus, sds = [], []
    for z in pooled[take]:
        m, v = model.predict_field_marginals(z, q)
        mus.append(m)
        sds.append(np.sqrt(np.maximum(v, 0.0)))
    mu, sd = np.array(mus), np.array(sds)
    scale = std.scale
    mean = mu.mean(axis=0)
    total_sd = np.sqrt(np.maximum((sd**2 + mu**2).mean(axis=0) - mean**2, 0.0))
    med = _mixture_median(mu, sd)
    table = np.column_stack([q, scale * med, scale * (med - total_sd), scale * (med + total_sd), scale * total_sd, scale * mean])
    out.mkdir(parents=True, exist_ok=True)
    io.write_rows(out / "field_posterior.csv", io.FIELD_COLUMNS, table.tolist())
    io.write_json(
        out / "predict_summary.json",
        {
            "command": "predict",
            "config_hash": cfg.digest(),
            "n_query": int(q.shape[0]),
            "n_weight_samples": int(take.size),
            "mean_band_halfwidth": float(np.mean(scale * total_sd)),
        },
    )
    log.info("predicted %d query points from %d weight samples -> %s", q.shape[0], take.size, out)
    return table


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netcal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"netcal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML config path or builtin name (two_sensor, network, clogging)")
        sp.add_argument("--out", help="output directory (overrides config 'output')")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--chains-n", type=int, dest="chains_n", help="override the number of HMC chains")

    sp = sub.add_parser("simulate", help="generate a scenario dataset")
    common(sp)
    sp = sub.add_parser("calibrate", help="sample calibration weight posteriors")
    common(sp)
    sp.add_argument("--data", help="observations.csv (default: config [data].path)")
    sp = sub.add_parser("predict", help="field posterior over a query grid")
    common(sp)
    sp.add_argument("--data", help="observations.csv (default: config [data].path)")
    sp.add_argument("--chains", required=True, help="chains.csv written by calibrate")
    return p


def _configure_logging() -> None:
    level = os.environ.get("NETCAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _data_path(args, cfg: RunConfig) -> Path:
    if args.data:
        return Path(args.data)
    if cfg.data is not None:
        return Path(cfg.data.path)
    raise ConfigError("no data: pass --data or set [data].path")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = _parser().parse_args(argv)
    try:
        if args.chains_n is not None and args.chains_n < 1:
            raise ConfigError("--chains-n must be >= 1")
        cfg = load_config(args.config).with_overrides(seed=args.seed, n_chains=args.chains_n)
        out = Path(args.out or cfg.output or ".")
        if args.command == "simulate":
            simulate(cfg, out)
        elif args.command == "calibrate":
            calibrate_command(cfg, io.read_observations(_data_path(args, cfg)), out)
        else:
            predict_command(cfg, io.read_observations(_data_path(args, cfg)), Path(args.chains), out)
    except (ConfigError, ScenarioError, io.FormatError, FileNotFoundError) as exc:
        print(f"netcal: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoReferenceError as exc:
        print(f"netcal: {exc}", file=sys.stderr)
        return EXIT_NO_REFERENCE
    except InitializationError as exc:
        print(f"netcal: sampler initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT
    except ArtifactMismatch as exc:
        print(f"netcal: chains do not match the data: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
