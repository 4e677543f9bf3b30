"""Flat CSV and JSON artifacts.

Floats are written with 17 significant digits (``%.17g``), which round-trips
every double exactly, so re-reading a file reproduces the in-memory values
bit for bit and reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from netcal.data import Dataset, Observation, Truth
from netcal.kernels import SpaceTimePoint

OBSERVATION_COLUMNS = ("sensor_id", "x_km", "y_km", "t", "value", "is_reference")
TRUTH_COLUMNS = ("sensor_id", "t", "true_field", "true_weight")
CHAIN_COLUMNS = ("chain_id", "sample_idx", "sensor_id", "ts_idx", "z_value")
WEIGHT_SUMMARY_COLUMNS = ("sensor_id", "t", "median", "lower", "upper", "sd", "ci_low", "ci_high")
FIELD_COLUMNS = ("x_km", "y_km", "t", "median", "lower", "upper", "sd", "mean")


class FormatError(ValueError):
    """A CSV file does not have the expected layout."""


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(float(v), ".17g")


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_rows(path: Path, columns: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != tuple(columns):
            raise FormatError(f"{path}: expected columns {','.join(columns)}, got {reader.fieldnames}")
        return list(reader)


# -- observations and truth ------------------------------------------------


def write_observations(path: Path, data: Dataset) -> None:
    refs = data.reference_sensors
    write_rows(
        path,
        OBSERVATION_COLUMNS,
        ((o.sensor, o.where.x, o.where.y, o.where.t, o.value, o.sensor in refs) for o in data.observations),
    )


def read_observations(path: Path) -> Dataset:
    rows = read_rows(path, OBSERVATION_COLUMNS)
    obs, refs, nonrefs = [], set(), set()
    try:
        for i, r in enumerate(rows, start=2):
            s = int(r["sensor_id"])
            obs.append(Observation(s, SpaceTimePoint(float(r["x_km"]), float(r["y_km"]), float(r["t"])), float(r["value"])))
            flag = r["is_reference"].strip()
            if flag not in ("0", "1"):
                raise FormatError(f"{path}:{i}: is_reference must be 0 or 1")
            (refs if flag == "1" else nonrefs).add(s)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from None
    if refs & nonrefs:
        raise FormatError(f"{path}: sensors {sorted(refs & nonrefs)} are flagged both reference and not")
    n = max((o.sensor for o in obs), default=-1) + 1
    return Dataset(tuple(obs), n, frozenset(refs))


def write_truth(path: Path, data: Dataset) -> None:
    if data.truth is None:
        raise ValueError("dataset carries no ground truth")
    tr = data.truth
    write_rows(
        path,
        TRUTH_COLUMNS,
        ((o.sensor, o.where.t, f, w) for o, f, w in zip(data.observations, tr.field, tr.weight)),
    )


def read_truth(path: Path, data: Dataset) -> Truth:
    """Truth rows aligned with ``data``; noise is recovered as the residual."""
    rows = read_rows(path, TRUTH_COLUMNS)
    if len(rows) != len(data):
        raise FormatError(f"{path}: {len(rows)} truth rows for {len(data)} observations")
    f = np.array([float(r["true_field"]) for r in rows])
    w = np.array([float(r["true_weight"]) for r in rows])
    return Truth(f, w, data.values - w * f)


# -- chains ----------------------------------------------------------------


def write_chains(path: Path, chains, layout, thin: int = 1) -> None:
    def rows():
        for c, chain in enumerate(chains):
            for k in range(0, chain.samples.shape[0], thin):
                z = chain.samples[k]
                for idx, sensor, pos in layout.entries():
                    yield (c, k, sensor, pos, z[idx])

    write_rows(path, CHAIN_COLUMNS, rows())


def read_chains(path: Path) -> dict:
    """Parse chains.csv into ``{"samples": {chain: (n, d) array}, "entries": [(sensor, ts_idx), ...]}``."""
    rows = read_rows(path, CHAIN_COLUMNS)
    entries: list[tuple[int, int]] = []
    seen = set()
    by_chain: dict[int, dict[int, list[float]]] = {}
    try:
        for r in rows:
            key = (int(r["sensor_id"]), int(r["ts_idx"]))
            if key not in seen:
                seen.add(key)
                entries.append(key)
            c, k = int(r["chain_id"]), int(r["sample_idx"])
            by_chain.setdefault(c, {}).setdefault(k, []).append(float(r["z_value"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    samples = {}
    for c, draws in sorted(by_chain.items()):
        arr = [draws[k] for k in sorted(draws)]
        if any(len(a) != len(entries) for a in arr):
            raise FormatError(f"{path}: chain {c} has incomplete samples")
        samples[c] = np.array(arr, dtype=float)
    return {"samples": samples, "entries": entries}


def write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v)}")
