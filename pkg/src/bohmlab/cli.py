"""Command-line front end: ``bohmlab run|validate <config>`` and ``bohmlab list-scenarios``.

Configs are flat YAML mappings.  ``scenario`` selects the experiment; every
other key must belong to that scenario's schema (see ``list-scenarios``).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np
import yaml

from . import __version__
from .errors import BohmlabError, ConfigError
from .fock import COMPACT_BUMP, GAUSSIAN_BUMP
from .scenarios import DEFAULTS, SCENARIOS, ScenarioResult, run as run_named
from .stats import EnsembleReport

__all__ = ["main", "load_config", "validate_config", "run_scenario", "emit_histogram_data", "format_number"]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

# key -> (kind, lower, upper); bounds inclusive, None for open
_RANGES = {
    "seed": ("int", 0, 2**64 - 1),
    "ensemble_size": ("int", 1, 10**7),
    "record": ("int", 0, 10**5),
    "record_every": ("int", 1, 10**6),
    "grid_points": ("int", 32, 8192),
    "grid_length": ("float", 1e-6, None),
    "radius": ("float", 1e-6, None),
    "dt": ("float", 1e-8, None),
    "horizon": ("float", 1e-8, None),
    "omega": ("float", 1e-8, None),
    "bins": ("int", 1, 1024),
    "slit_separation": ("float", 0.0, None),
    "slit_width": ("float", 1e-6, None),
    "momentum": ("float", None, None),
    "screen_half_width": ("float", 1e-6, None),
    "hbar": ("float", 1e-12, None),
    "mass": ("float", 0.0, None),
    "coupling_g": ("float", 0.0, None),
    "cutoff_radius": ("float", 1e-6, None),
    "cutoff_radius_max": ("float", 1e-6, None),
    "cutoff_shape": ("choice", (GAUSSIAN_BUMP, COMPACT_BUMP), None),
    "truncation": ("int", 1, 4),
    "checkpoints": ("int", 1, 10**4),
    "eigenvalues": ("int", 2, 64),
    "halvings": ("int", 1, 12),
    "foliation_amplitude": ("float", 0.0, 0.95),
    "hist_half_width": ("float", 1e-6, None),
    "samples": ("int", 10, 10**4),
    "potential_strength": ("float", None, None),
    "potential_threshold": ("float", 0.0, None),
    "output_dir": ("str", None, None),
}
_MASSIVE = {"bell-process", "ibc-process", "ibc-spectrum"}


def format_number(v) -> str:
    """17 significant digits, scientific; empty for missing values."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.16e}"


def _coerce(key, value):
    kind, lo, hi = _RANGES[key]
    if kind == "choice":
        if value not in lo:
            raise ConfigError(f"{key} must be one of {', '.join(lo)}")
        return value
    if kind == "str":
        if not isinstance(value, str) or not value:
            raise ConfigError(f"{key} must be a non-empty string")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigError(f"{key}={value} outside [{lo}, {hi if hi is not None else 'inf'}]")
    return value


def validate_config(raw) -> dict:
    """Strict validation; returns the full parameter dict with defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of flat keys")
    name = raw.get("scenario")
    if name not in SCENARIOS:
        raise ConfigError(f"scenario must be one of: {', '.join(SCENARIOS)}")
    schema = DEFAULTS[name]
    unknown = sorted(k for k in raw if k != "scenario" and k not in schema)
    if unknown:
        raise ConfigError(f"unknown key(s) for {name}: {', '.join(map(str, unknown))}")
    params = dict(schema)
    for key, value in raw.items():
        if key == "scenario":
            continue
        params[key] = None if value is None and schema[key] is None else _coerce(key, value)
    if name in _MASSIVE and not params["mass"] > 0:
        raise ConfigError("mass must be positive for this scenario")
    if "dt" in params and params.get("horizon") is not None:
        steps = params["horizon"] / params["dt"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) and name != "equivariance-nr":
            raise ConfigError("dt must divide the horizon")
    if name in ("dirac-worldlines",) and params["dt"] > params["grid_length"] / params["grid_points"]:
        raise ConfigError("dt must not exceed the grid spacing")
    if name == "ibc-spectrum" and params["cutoff_radius_max"] / 2 ** params["halvings"] < params["radius"] / (params["grid_points"] + 1):
        raise ConfigError("finest cutoff radius is below the radial grid spacing")
    params["scenario"] = name
    return params


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return validate_config(raw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _bin_centers(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=float)
    return 0.5 * (e[:-1] + e[1:])


def emit_histogram_data(report, path) -> None:
    """``bin_center,empirical,theoretical`` rows from a report or its JSON dict.

    Multi-dimensional histograms get one ``bin_center_<axis>`` column per
    axis, rows in C order.  An empty ensemble gives a header-only file.
    """
    d = report.to_dict() if isinstance(report, EnsembleReport) else report
    edges = d["bin_edges"]
    header = ["bin_center"] if len(edges) == 1 else [f"bin_center_{a}" for a in range(len(edges))]
    header += ["empirical", "theoretical"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        if not d["sample_count"]:
            return
        centers = np.meshgrid(*[_bin_centers(e) for e in edges], indexing="ij")
        emp = np.asarray(d["histogram_empirical"], dtype=float).ravel()
        theo = np.asarray(d["histogram_theoretical"], dtype=float).ravel()
        flat = [c.ravel() for c in centers]
        for i in range(emp.size):
            w.writerow([format_number(c[i]) for c in flat] + [format_number(emp[i]), format_number(theo[i])])


def write_trajectories(result: ScenarioResult, path) -> None:
    """Rows sorted by trajectory id, then time."""
    width = max([len(r[3]) for r in result.rows] + [1])
    header = ["trajectory_id", "time", "sector"] + [f"coord_{i}" for i in range(width)] + ["event"]
    rows = sorted(result.rows, key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tid, t, sector, coords, event in rows:
            coords = list(coords) + [None] * (width - len(coords))
            w.writerow([tid, format_number(t), int(sector)] + [format_number(c) for c in coords] + [event])


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])


def build_report(params: dict, result: ScenarioResult) -> dict:
    meta = {"version": __version__, "seed": params["seed"]}
    meta.update(result.metadata)
    if result.report is not None:
        meta.setdefault("excluded_fraction", result.report.excluded_fraction)
    config = {k: v for k, v in params.items() if k != "output_dir"}
    return _jsonable(
        {
            "scenario": result.scenario,
            "config": config,
            "report": result.report.to_dict() if result.report is not None else None,
            "metadata": meta,
            "checks": {c.name: c.to_dict() for c in result.checks},
            "passed": result.passed,
        }
    )


def write_outputs(params: dict, result: ScenarioResult, out_dir=None) -> dict:
    out_dir = params["output_dir"] if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_trajectories(result, os.path.join(out_dir, "trajectories.csv"))
    doc = build_report(params, result)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if result.report is not None:
        emit_histogram_data(result.report, os.path.join(out_dir, "histogram.csv"))
    for name, (header, rows) in result.extra_tables.items():
        _write_table(os.path.join(out_dir, name), header, rows)
    return doc


def summary_lines(result: ScenarioResult) -> list:
    lines = [f"scenario {result.scenario}"]
    for c in result.checks:
        value = "" if c.value is None else f" value={c.value:.6g}"
        limit = "" if c.threshold is None else f" threshold={c.threshold:.6g}"
        lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}{value}{limit}")
    lines.append("all checks passed" if result.passed else "some checks failed")
    return lines


def run_scenario(config_path, out_dir=None, stream=None) -> int:
    """Run a config file; returns the process exit code."""
    stream = sys.stdout if stream is None else stream
    try:
        params = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_named(params["scenario"], params)
    except (BohmlabError, ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        # the config was valid, so anything raised here is a numerical/runtime failure
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_outputs(params, result, out_dir)
    print("\n".join(summary_lines(result)), file=stream)
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _list_scenarios() -> str:
    lines = []
    for name, defaults in DEFAULTS.items():
        keys = ", ".join(f"{k}={v}" for k, v in defaults.items())
        lines.append(f"{name}\n    {keys}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bohmlab", description="Run trajectory and jump-process experiments")
    parser.add_argument("--version", action="version", version=f"bohmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a YAML config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None, help="override output_dir from the config")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    sub.add_parser("list-scenarios", help="print scenarios and their keys with defaults")
    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        print(_list_scenarios())
        return EXIT_OK
    if args.command == "validate":
        try:
            params = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"valid {params['scenario']} config")
        return EXIT_OK
    return run_scenario(args.config, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
