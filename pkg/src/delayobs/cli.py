"""Command line entry points: run config-driven experiments, compare summaries."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .config import apply_override, config_from_dict, config_hash, parse_config
from .errors import ConfigError, SimulationError
from .report import compare_runs, format_table, run_and_report

__all__ = ["main"]

OUTPUT_ENV_VAR = "DELAYOBS_OUTPUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayobs",
        description="Simulate the three-stage adaptive observer for delayed measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment (or a one-key sweep)")
    run_p.add_argument("config", help="YAML configuration file (empty file for the benchmark)")
    run_p.add_argument("--output", help=f"output directory (default: ${OUTPUT_ENV_VAR} or ./runs)")
    run_p.add_argument(
        "--sweep",
        metavar="KEY=V1,V2,...",
        help="run once per value of one dotted configuration key, then compare",
    )
    run_p.add_argument("--decimate", type=int, help="override trace decimation")

    cmp_p = sub.add_parser("compare", help="tabulate metric deltas across summary files")
    cmp_p.add_argument("summaries", nargs="+", help="summary.json files from previous runs")
    return parser


def _resolve_output(arg: str | None, cfg_dir) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return Path(env)
    if cfg_dir:
        return Path(cfg_dir)
    return Path("runs")


def _parse_sweep(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ConfigError(f"sweep must look like key=v1,v2 (got {spec!r})")
    key, _, raw_vals = spec.partition("=")
    vals = [yaml.safe_load(v) for v in raw_vals.split(",") if v != ""]
    if len(vals) < 2:
        raise ConfigError("sweep needs at least two values")
    return key.strip(), vals


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping (or empty for defaults)")
    if args.decimate is not None:
        raw = apply_override(raw, "output.decimate", int(args.decimate))

    base_cfg = config_from_dict(raw)
    out_root = _resolve_output(args.output, (base_cfg.resolved or {}).get("output", {}).get("dir"))

    if not args.sweep:
        summary, csv_path = run_and_report(
            base_cfg, out_root, config_hash=config_hash(base_cfg.resolved)
        )
        print(f"run complete: {csv_path}")
        print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
        return 0

    key, vals = _parse_sweep(args.sweep)
    summaries = []
    for val in vals:
        cfg = config_from_dict(apply_override(raw, key, val))
        leaf = key.split(".")[-1]
        sub_dir = out_root / f"{leaf}={val}"
        summary, csv_path = run_and_report(cfg, sub_dir, config_hash=config_hash(cfg.resolved))
        summaries.append(summary)
        print(f"run {key}={val}: {csv_path}")
    headers, rows = compare_runs(summaries)
    print(format_table(headers, rows))
    return 0


def _cmd_compare(args) -> int:
    summaries = []
    for spec in args.summaries:
        p = Path(spec)
        if not p.exists():
            raise ConfigError(f"summary file not found: {p}")
        try:
            summaries.append(json.loads(p.read_text()))
        except json.JSONDecodeError as err:
            raise ConfigError(f"cannot parse {p}: {err}") from None
    headers, rows = compare_runs(summaries)
    print(format_table(headers, rows))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_compare(args)
    except SimulationError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
