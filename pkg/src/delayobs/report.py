"""Run summaries, comparison tables, and the run-to-files driver."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pipeline import ExperimentConfig, SimulationTrace, run_simulation

__all__ = ["RunSummary", "summarize", "run_and_report", "compare_runs", "format_table"]


@dataclass
class RunSummary:
    """Machine-readable convergence metrics of one run.

    ``wall_clock_s`` is informational and excluded from comparisons;
    everything else is a deterministic function of the configuration.
    """

    preset: str
    n: int
    m: int
    horizon: float
    config_hash: str
    omega_err_final: list
    theta_err_final: list
    x_err_final: float | None
    t_c: float | None
    omega_settle: list
    theta_settle: list
    x_settle: float | None
    stage_times: dict
    cond_warning: bool
    wall_clock_s: float

    def to_dict(self) -> dict:
        return asdict(self)


def _settle_time(times: np.ndarray, err_abs: np.ndarray, threshold: float) -> float | None:
    """First time from which the error never again exceeds the threshold."""
    finite = np.isfinite(err_abs)
    if not finite.any():
        return None
    idx = np.flatnonzero(finite)
    seg = err_abs[idx[0] : idx[-1] + 1]
    tseg = times[idx[0] : idx[-1] + 1]
    suffix_max = np.maximum.accumulate(seg[::-1])[::-1]
    hits = np.flatnonzero(suffix_max <= threshold)
    return float(tseg[hits[0]]) if hits.size else None


def _window_max(times: np.ndarray, vals: np.ndarray, t_from: float) -> float | None:
    sel = vals[times >= t_from]
    if sel.size == 0 or not np.isfinite(sel).any():
        return None
    return float(np.nanmax(np.abs(sel)))


def summarize(trace: SimulationTrace, cfg: ExperimentConfig, wall_clock_s: float = 0.0,
              config_hash: str = "") -> RunSummary:
    """Convergence metrics of a finished run, per the configured windows/thresholds."""
    p = cfg.plant
    meta = trace.meta
    sm = cfg.summary
    if trace.n_rows == 0:
        return RunSummary(
            preset=p.preset.name, n=p.n, m=p.m, horizon=cfg.grid.horizon,
            config_hash=config_hash, omega_err_final=[None] * p.m,
            theta_err_final=[None] * p.m, x_err_final=None, t_c=None,
            omega_settle=[None] * p.m, theta_settle=[None] * p.m, x_settle=None,
            stage_times={}, cond_warning=False, wall_clock_s=wall_clock_s,
        )
    times = trace.column("t")
    t_end = float(times[-1])
    window_from = t_end - sm.final_window_frac * cfg.grid.horizon

    omega_final: list = [None] * p.m
    if meta.get("omega_hat_final") is not None:
        omega_final = [abs(p.omega[j] - meta["omega_hat_final"][j]) for j in range(p.m)]

    theta_final = []
    theta_settle = []
    omega_settle = []
    for i in range(p.m):
        theta_err = trace.column(f"amp_thetaerr_{i + 1}")
        theta_final.append(_window_max(times, theta_err, window_from))
        amp = float(np.hypot(*p.a_coef[i]))
        theta_settle.append(_settle_time(times, np.abs(theta_err), sm.theta_settle_frac * amp))
        omega_err = trace.column(f"freq_omegaerr_{i + 1}")
        omega_settle.append(
            _settle_time(times, np.abs(omega_err), sm.omega_settle_frac * p.omega[i])
        )

    x_err = trace.column("obs_xerr_inf")
    x_final = _window_max(times, x_err, window_from)
    x_settle = _settle_time(times, np.abs(x_err), sm.x_settle_abs)

    return RunSummary(
        preset=p.preset.name,
        n=p.n,
        m=p.m,
        horizon=cfg.grid.horizon,
        config_hash=config_hash,
        omega_err_final=omega_final,
        theta_err_final=theta_final,
        x_err_final=x_final,
        t_c=meta.get("t_c"),
        omega_settle=omega_settle,
        theta_settle=theta_settle,
        x_settle=x_settle,
        stage_times={
            "freq_start": meta.get("freq_start"),
            "amp_start": meta.get("amp_start"),
            "gpebo_start": meta.get("gpebo_start"),
        },
        cond_warning=bool(meta.get("cond_warning", False)),
        wall_clock_s=wall_clock_s,
    )


def run_and_report(cfg: ExperimentConfig, out_dir, stem: str = "trace",
                   config_hash: str = "") -> tuple[RunSummary, Path]:
    """Run one experiment, write the trace CSV and summary JSON, return both."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    trace = run_simulation(cfg)
    wall = time.perf_counter() - started
    csv_path = out / f"{stem}.csv"
    trace.to_csv(csv_path, decimate=cfg.decimate)
    summary = summarize(trace, cfg, wall_clock_s=wall, config_hash=config_hash)
    payload = summary.to_dict()
    payload["trace_csv"] = csv_path.name
    with open(out / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary, csv_path


_COMPARE_SKIP = {"preset", "n", "m", "config_hash", "wall_clock_s", "stage_times", "trace_csv"}


def _flatten_metrics(d: dict) -> dict:
    flat = {}
    for key, val in d.items():
        if key in _COMPARE_SKIP:
            continue
        if isinstance(val, list):
            for i, v in enumerate(val, start=1):
                flat[f"{key}_{i}"] = v
        elif isinstance(val, (int, float)) or val is None:
            flat[key] = val
    return flat


def compare_runs(summaries: list) -> tuple[list[str], list[list]]:
    """Tabulate metrics of several runs of one preset, with deltas to the first.

    Returns ``(headers, rows)``; rows are sorted by metric name for stable
    output.  Refuses to compare runs of different presets or dimensions.
    """
    dicts = [s.to_dict() if isinstance(s, RunSummary) else dict(s) for s in summaries]
    if len(dicts) < 2:
        raise ConfigError("need at least two summaries to compare")
    first = dicts[0]
    for d in dicts[1:]:
        for key in ("preset", "n", "m"):
            if d.get(key) != first.get(key):
                raise ConfigError(
                    f"cannot compare runs with different '{key}': {d.get(key)!r} vs {first.get(key)!r}"
                )
    flats = [_flatten_metrics(d) for d in dicts]
    names = sorted(set().union(*[f.keys() for f in flats]))
    headers = ["metric"] + [f"run{i + 1}" for i in range(len(flats))] + [
        f"delta_run{i + 1}" for i in range(1, len(flats))
    ]
    rows = []
    for name in names:
        vals = [f.get(name) for f in flats]
        deltas = []
        for v in vals[1:]:
            if v is None or vals[0] is None:
                deltas.append(None)
            else:
                deltas.append(v - vals[0])
        rows.append([name] + vals + deltas)
    return headers, rows


def format_table(headers: list[str], rows: list[list]) -> str:
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [headers] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(headers))]
    lines = []
    for r_i, row in enumerate(cells):
        lines.append("  ".join(val.ljust(widths[c]) for c, val in enumerate(row)))
        if r_i == 0:
            lines.append("  ".join("-" * widths[c] for c in range(len(headers))))
    return "\n".join(lines)
