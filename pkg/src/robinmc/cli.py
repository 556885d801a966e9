"""Command line experiment runner: ``robinmc run|report|list|schema``.

Exit codes: 0 success, 2 invalid configuration or run directory, 3 numerical
failure, 4 a scientific check outside its error budget.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema

from .errors import ConfigError, RobinMCError
from .experiments import (
    CHECK_HEADER,
    ESTIMATE_HEADER,
    EXPERIMENTS,
    SLACK_HEADER,
    ExperimentResult,
    config_hash,
    fmt,
    run_experiment,
)

OUTPUT_ENV = "ROBINMC_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SCIENCE = 0, 2, 3, 4

log = logging.getLogger("robinmc")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NUMS = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "robinmc experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "domain"],
    "properties": {
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["halfline", "interval", "ball", "annulus"]},
                "L": _POS, "R": _POS, "d": {"type": "integer", "minimum": 1},
                "r_in": _POS, "r_out": _POS,
            },
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["zero", "quadratic", "quadratic_form"]},
                "a": _NUM,
                "H": {"type": "array", "items": _NUMS},
                "center": _NUMS,
            },
        },
        "Q": {"oneOf": [_NUM, _NUMS]},
        "observable": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["cosine", "gaussian"]},
                "frequency": _NUM, "shift": _NUM, "amplitude": _NUM, "offset": _NUM, "width": _POS,
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 2},
                "dt": _POS,
                "seed": {"type": "integer", "minimum": 0},
                "n_workers": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["projection", "skorokhod"]},
            },
        },
        "pde": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"nodes": {"type": "integer", "minimum": 16}, "steps": {"type": "integer", "minimum": 1}},
        },
        "x": _NUMS,
        "t": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sigma": _POS, "bias_slack": {"type": "number", "minimum": 0},
                "lambdas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "r0": _POS, "r_grid_size": {"type": "integer", "minimum": 2},
                "order_base_nodes": {"type": "integer", "minimum": 16},
                "profile_radius": _POS,
                "schedules": {"type": "array", "items": {"enum": ["smoothstep", "linear"]}, "minItems": 1},
                "rel_tol": _POS, "transport_paths": {"type": "integer", "minimum": 1},
                "kappa1": _NUM, "kappa2": _NUM,
                "quadrature_nodes": {"type": "integer", "minimum": 17}, "eps": _POS,
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "collar_radius": _POS,
                "mode": {"enum": ["corollary", "theorem"]},
                "sigma": {"type": "number", "minimum": 0}, "K": _NUM,
                "t_max": _POS, "n_times": {"type": "integer", "minimum": 3},
                "grid_points": {"type": "integer", "minimum": 2},
            },
        },
        "output_dir": {"type": "string"},
    },
}


def load_config(path: str | os.PathLike) -> dict:
    """Read and validate a configuration; raises :class:`ConfigError` naming the offending key."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {e.message}")
    return cfg


def output_root(cfg: dict, override: str | None = None) -> Path:
    return Path(override or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or "robinmc-out")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def check_rows(cfg: dict, result: ExperimentResult) -> list[tuple]:
    h = config_hash(cfg)
    seed = cfg.get("mc", {}).get("seed", 0)
    return [(cfg["experiment"], c.claim, h, str(seed), "pass" if c.passed else "fail", fmt(c.margin),
             fmt(c.error_budget)) for c in result.checks]


def write_run(cfg: dict, result: ExperimentResult, out: Path, name: str) -> Path:
    """Write ``estimates.csv``, ``slack.csv``, ``checks.csv``, PDE snapshots and ``summary.json``."""
    run_dir = out / name
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "estimates.csv", ESTIMATE_HEADER, result.estimates)
    _write_csv(run_dir / "slack.csv", SLACK_HEADER, result.slacks)
    _write_csv(run_dir / "checks.csv", CHECK_HEADER, check_rows(cfg, result))
    for key, fld in sorted(result.snapshots.items()):
        with open(run_dir / f"{key}.csv", "w", newline="") as fh:
            fld.write_csv(fh)
    summary = {
        "experiment": cfg["experiment"],
        "config_hash": config_hash(cfg),
        "config": cfg,
        "passed": result.passed,
        "checks": [
            {"claim": c.claim, "passed": c.passed, "margin": c.margin, "error_budget": c.error_budget}
            for c in result.checks
        ],
    }
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def _run_one(path: str, out_override: str | None, workers: int | None) -> tuple[int, str]:
    cfg = load_config(path)
    if workers is not None:
        cfg.setdefault("mc", {})["n_workers"] = workers
    result = run_experiment(cfg)
    out = output_root(cfg, out_override)
    run_dir = write_run(cfg, result, out, Path(path).stem)
    lines = [f"{run_dir}: {len(result.checks)} checks, {'pass' if result.passed else 'FAIL'}"]
    for row in check_rows(cfg, result):
        if row[4] == "fail":
            lines.append("violation: " + ",".join(row))
    return (EXIT_OK if result.passed else EXIT_SCIENCE), "\n".join(lines)


def cmd_run(args) -> int:
    """Configs in one invocation run concurrently; messages print in argument order."""
    def guarded(path):
        try:
            return _run_one(path, args.output_dir, args.workers)
        except ConfigError as exc:
            return EXIT_CONFIG, f"config error: {exc}"
        except (RobinMCError, ArithmeticError, ValueError, FloatingPointError) as exc:
            return EXIT_NUMERIC, f"numerical failure in {path}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, min(len(args.config), args.jobs))) as pool:
        outcomes = list(pool.map(guarded, args.config))
    for _, msg in outcomes:
        print(msg, file=sys.stderr if "error" in msg or "failure" in msg else sys.stdout)
    return max(code for code, _ in outcomes)


def collect_checks(directory: Path) -> list[tuple]:
    """Check rows from every ``summary.json`` under ``directory`` (sorted by path)."""
    rows = []
    for summary in sorted(directory.rglob("summary.json")):
        try:
            data = json.loads(summary.read_text())
            cfg = data["config"]
            rows.extend(
                (data["experiment"], c["claim"], data["config_hash"], str(cfg.get("mc", {}).get("seed", 0)),
                 "pass" if c["passed"] else "fail", fmt(c["margin"]), fmt(c["error_budget"]))
                for c in data["checks"]
            )
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"corrupt run file {summary}: {exc}") from exc
    return rows


def aggregate_checks(rows: list[tuple]) -> list[tuple]:
    """One row per experiment: all checks must pass; the margin is the smallest one."""
    out = []
    for name in sorted({r[0] for r in rows}):
        group = [r for r in rows if r[0] == name]
        worst = min(group, key=lambda r: float(r[5]))
        hashes = ";".join(sorted({r[2] for r in group}))
        seeds = ";".join(sorted({r[3] for r in group}, key=int))
        passed = "pass" if all(r[4] == "pass" for r in group) else "fail"
        out.append((name, EXPERIMENTS[name][1] if name in EXPERIMENTS else name, hashes, seeds, passed,
                    worst[5], worst[6]))
    return out


def golden_row(directory: Path, golden: Path) -> tuple:
    """Compare every golden CSV with the file of the same relative path under ``directory``."""
    files = sorted(golden.rglob("*.csv"))
    mismatched = [f for f in files if not (directory / f.relative_to(golden)).is_file()
                  or (directory / f.relative_to(golden)).read_bytes() != f.read_bytes()]
    ok = bool(files) and not mismatched
    return ("golden_reproduction", "byte-identical reproduction of the golden CSVs", "-", "-",
            "pass" if ok else "fail", fmt(-len(mismatched) if files else -1), "0")


def cmd_report(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        print(f"not a directory: {directory}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = collect_checks(directory)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if not args.detail:
        rows = aggregate_checks(rows)
    if args.golden:
        rows.append(golden_row(directory, Path(args.golden)))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(CHECK_HEADER)
    w.writerows(rows)
    if args.output:
        _write_csv(Path(args.output), CHECK_HEADER, rows)
    return EXIT_SCIENCE if any(r[4] == "fail" for r in rows) else EXIT_OK


def cmd_list(args) -> int:
    for name, (_, description) in sorted(EXPERIMENTS.items()):
        print(f"{name}\t{description}")
    return EXIT_OK


def cmd_schema(args) -> int:
    json.dump(CONFIG_SCHEMA, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robinmc", description="Reflecting-diffusion Monte Carlo experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one or more experiment configs")
    r.add_argument("config", nargs="+")
    r.add_argument("-o", "--output-dir", help=f"output root (default: config, ${OUTPUT_ENV}, ./robinmc-out)")
    r.add_argument("-w", "--workers", type=int, help="override mc.n_workers (results do not depend on it)")
    r.add_argument("-j", "--jobs", type=int, default=4, help="configs run concurrently")
    r.set_defaults(func=cmd_run)
    rep = sub.add_parser("report", help="summarise the checks of a directory of runs")
    rep.add_argument("directory")
    rep.add_argument("-o", "--output", help="also write the summary CSV here")
    rep.add_argument("--detail", action="store_true", help="one row per check instead of per experiment")
    rep.add_argument("--golden", help="golden directory to compare the run CSVs against byte for byte")
    rep.set_defaults(func=cmd_report)
    sub.add_parser("list", help="list available experiments").set_defaults(func=cmd_list)
    sub.add_parser("schema", help="print the config JSON schema").set_defaults(func=cmd_schema)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
