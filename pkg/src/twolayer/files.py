"""On-disk formats: data CSV + manifest, estimate directories, JSON configs
and tidy result tables.

Every manifest and table carries ``(version, seed, config_hash)``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .core import FitReport, PanelDataset, PrecisionStack, center_and_wrap, edge_pairs

SCHEMA_VERSION = 1
LAYOUT = "categories-contiguous"
FLOAT_FMT = "%.17g"  # round-trips float64 exactly


class ValidationError(ValueError):
    """Bad configuration or input content (exit code 2)."""


class FileFormatError(OSError):
    """Missing, unreadable or malformed file (exit code 4)."""


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(seed, chash) -> dict:
    return {"version": __version__, "seed": seed, "config_hash": chash}


# ---------------------------------------------------------------- configs

SCENARIO_KEYS = {
    "architecture": str, "p": int, "n": int, "K": int, "m": int, "rho": (int, float),
    "seed": int, "alphas": (list, type(None)), "nn_scaling": str,
}
CONFIG_KEYS = {
    "simulate": {"schema_version": int, "scenario": dict},
    "roc": {
        "schema_version": int, "scenario": dict, "architectures": list, "rhos": list,
        "methods": list, "lambda_min": (int, float), "lambda_max": (int, float),
        "grid_size": int, "replicates": int, "seed": int,
    },
    "repro-table1": {
        "schema_version": int, "scenario": dict, "methods": list, "criteria": list,
        "grid_size": int, "grid_span": (int, float), "gamma": (int, float), "folds": int,
        "replicates": int, "seed": int,
    },
}
REQUIRED = {"simulate": {"schema_version", "scenario"}}


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _unique_pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValidationError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _check_keys(obj: dict, allowed: dict, text: str, where: str):
    for key, value in obj.items():
        line = _line_of(text, key)
        if key not in allowed:
            raise ValidationError(f"line {line}: unknown key {key!r} in {where}")
        kind = allowed[key]
        if isinstance(value, bool) or not isinstance(value, kind):
            raise ValidationError(f"line {line}: key {key!r} in {where} has the wrong type")


def load_config(path, kind: str) -> tuple[dict, str]:
    """Parse and validate a JSON config; returns ``(config, text)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        obj = json.loads(text, object_pairs_hook=_unique_pairs)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("line 1: config must be a JSON object")
    _check_keys(obj, CONFIG_KEYS[kind], text, "config")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(
            f"line {_line_of(text, 'schema_version')}: schema_version must be {SCHEMA_VERSION}"
        )
    if "scenario" not in obj:
        raise ValidationError("config needs a 'scenario' object")
    _check_keys(obj["scenario"], SCENARIO_KEYS, text, "scenario")
    return obj, text


# ---------------------------------------------------------------- atomic outputs

@contextmanager
def staged_dir(target):
    """Write into a scratch directory and move the files into ``target`` only
    if the block succeeds, so failures leave no partial outputs."""
    target = Path(target)
    parent = target.parent if str(target.parent) else Path(".")
    try:
        parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".twolayer-", dir=parent))
    except OSError as exc:
        raise FileFormatError(f"cannot create output under {parent}: {exc.strerror or exc}") from exc
    try:
        yield tmp
        target.mkdir(parents=True, exist_ok=True)
        for root, _, files in os.walk(tmp):
            rel = Path(root).relative_to(tmp)
            (target / rel).mkdir(parents=True, exist_ok=True)
            for f in files:
                os.replace(Path(root) / f, target / rel / f)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def staged_file(target):
    """Like :func:`staged_dir` for a single file; yields the scratch path."""
    target = Path(target)

    @contextmanager
    def _cm():
        with staged_dir(target.parent if str(target.parent) else Path(".")) as tmp:
            yield tmp / target.name

    return _cm()


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _read_matrix(path, expect=None):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if expect is not None and arr.shape != expect:
        raise FileFormatError(f"{path}: expected shape {expect}, found {arr.shape}")
    return arr


# ---------------------------------------------------------------- data

def manifest_path(data_csv) -> Path:
    return Path(data_csv).with_suffix(".json")


def write_data(directory, data: PanelDataset, prov: dict, stem: str = "data") -> Path:
    directory = Path(directory)
    csv_path = directory / f"{stem}.csv"
    np.savetxt(csv_path, data.values, delimiter=",", fmt=FLOAT_FMT)
    meta = {
        "n": data.n, "K": data.k_categories, "p": data.p, "layout": LAYOUT,
        "centered": bool(data.centered), **prov,
    }
    _dump_json(directory / f"{stem}.json", meta)
    return csv_path


def read_data(csv_path) -> tuple[PanelDataset, dict]:
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileFormatError(f"data file {csv_path} does not exist")
    meta = _read_json(manifest_path(csv_path))
    for key in ("n", "K", "p", "layout"):
        if key not in meta:
            raise FileFormatError(f"{manifest_path(csv_path)}: missing {key!r}")
    if meta["layout"] != LAYOUT:
        raise FileFormatError(f"unsupported layout {meta['layout']!r}")
    values = _read_matrix(csv_path, (meta["n"], meta["K"] * meta["p"]))
    try:
        data = center_and_wrap(values, meta["K"], meta["p"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return data, meta


# ---------------------------------------------------------------- estimates

def write_stack(directory, stack: PrecisionStack, meta: dict) -> None:
    """Dense CSV per layer, a manifest and an edge list."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, om in enumerate(stack.omegas):
        np.savetxt(directory / f"layer_{k}.csv", om, delimiter=",", fmt=FLOAT_FMT)
    full = {"K": stack.k_categories, "p": stack.p, "alphas": stack.alphas.tolist(), **meta}
    _dump_json(directory / "manifest.json", full)
    with open(directory / "edges.tsv", "w", newline="") as fh:
        fh.write(
            f"# version={meta.get('version')} seed={meta.get('seed')} "
            f"config_hash={meta.get('config_hash')}\n"
        )
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["i", "j", "weight", "layer"])
        for k, om in enumerate(stack.omegas):
            for i, j in edge_pairs(om):
                w.writerow([i, j, repr(float(om[i, j])), k])


def fit_meta(fit: FitReport, prov: dict, extra: dict | None = None) -> dict:
    return {
        "method": fit.method,
        "lambda1": fit.penalties.lambda1,
        "lambda2": fit.penalties.lambda2,
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
        "wall_time_seconds": fit.wall_time_seconds,
        "objective_trace": [float(v) for v in fit.objective_trace],
        "edge_count": fit.edge_count,
        "flags": list(fit.flags),
        **(extra or {}),
        **prov,
    }


def read_stack(directory) -> tuple[PrecisionStack, dict]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileFormatError(f"estimate directory {directory} does not exist")
    meta = _read_json(directory / "manifest.json")
    K, p = meta["K"], meta["p"]
    omegas = np.stack([_read_matrix(directory / f"layer_{k}.csv", (p, p)) for k in range(K + 1)])
    try:
        stack = PrecisionStack(omegas, meta.get("alphas"))
    except ValueError as exc:
        raise ValidationError(f"{directory}: {exc}") from exc
    return stack, meta


# ---------------------------------------------------------------- tables

def write_table(path, rows: list[dict], fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(rows, indent=2) + "\n")
        return
    if fmt != "csv":
        raise ValidationError(f"unknown format {fmt!r}")
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
