"""Experiment configuration files: schema, defaults, validation, hashing.

The canonical format is YAML with a fixed key set.  An empty file yields
the built-in benchmark experiment; unknown keys are rejected with their
full path so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .pipeline import (
    ExperimentConfig,
    FilterPoles,
    GainConfig,
    GridConfig,
    StageSchedule,
    SummaryConfig,
)
from .plant import PlantConfig, build_preset

__all__ = ["DEFAULTS", "parse_config", "config_from_dict", "config_hash", "apply_override"]

DEFAULTS: dict = {
    "plant": {
        "preset": "paper",
        "params": {},
        "d": 2.0,
        "x0": [-5.0, 5.0],
        "omega": [5.0, 5.0],
        "a_coef": [[0.3, 3.0], [0.2, 2.0]],
        "q": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]],
    },
    "gains": {"gamma1": [1000.0, 10000.0], "gamma2": 100.0, "gamma3": 100.0},
    "filters": {"lambda1": 1.0, "lambda2": 1.0, "lambda3": 1.0},
    "mu": 0.01,
    "grid": {"t0": 0.0, "h": 0.001, "horizon": 60.0},
    "stages": {
        "freq_start": None,
        "amp_start": 20.0,
        "gpebo_start": 40.0,
        "auto_switch": False,
        "inject_true_theta": False,
        "e_hat0": None,
    },
    "conditioning": {"eps_psi": 1e-8, "beta_gate": 60.0, "event_hold": 1.0},
    "output": {"decimate": 10, "dir": None},
    "summary": {
        "final_window_frac": 0.2,
        "omega_settle_frac": 0.02,
        "theta_settle_frac": 0.05,
        "x_settle_abs": 0.01,
    },
}

# keys whose values are free-form and not walked recursively
_OPAQUE_PATHS = {"plant.params"}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = {}
    for key, dval in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in user:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict) and here not in _OPAQUE_PATHS:
            uval = user[key]
            if uval is None:
                uval = {}
            if not isinstance(uval, dict):
                raise ConfigError(f"{here}: expected a mapping, got {type(uval).__name__}")
            out[key] = _merge(dval, uval, here)
        else:
            out[key] = copy.deepcopy(user[key])
    for key in user:
        if key not in defaults:
            here = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown configuration key: {here}")
    return out


def parse_config(path) -> ExperimentConfig:
    """Load, merge with defaults, and validate one experiment configuration."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {p}: {err}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping (or empty for defaults)")
    return config_from_dict(raw)


def config_from_dict(user: dict) -> ExperimentConfig:
    """Build a validated experiment from a (possibly partial) configuration dict."""
    resolved = _merge(DEFAULTS, user)
    plant_d = resolved["plant"]
    preset = build_preset(str(plant_d["preset"]), plant_d["params"])

    explicit = user.get("plant", {}) or {}
    if preset.name != "paper":
        for key in ("x0", "omega", "a_coef"):
            if key not in explicit:
                raise ConfigError(
                    f"plant.{key} must be given explicitly for preset '{preset.name}'"
                )
        if "q" not in explicit:
            # one elementary projector per state by default
            plant_d["q"] = [np.diag(row).tolist() for row in np.eye(preset.n)]

    try:
        plant = PlantConfig(
            preset=preset,
            q_mats=[np.asarray(q, dtype=float) for q in plant_d["q"]],
            omega=[float(w) for w in plant_d["omega"]],
            a_coef=[(float(a[0]), float(a[1])) for a in plant_d["a_coef"]],
            d=float(plant_d["d"]),
            x0=np.asarray(plant_d["x0"], dtype=float),
        )
    except (TypeError, IndexError) as err:
        raise ConfigError(f"plant: malformed field ({err})") from None

    stages_d = resolved["stages"]
    e_hat0 = stages_d["e_hat0"]
    cond = resolved["conditioning"]
    beta_gate = cond["beta_gate"]
    cfg = ExperimentConfig(
        plant=plant,
        gains=GainConfig(
            gamma1=[float(g) for g in resolved["gains"]["gamma1"]],
            gamma2=float(resolved["gains"]["gamma2"]),
            gamma3=float(resolved["gains"]["gamma3"]),
        ),
        poles=FilterPoles(
            lambda1=float(resolved["filters"]["lambda1"]),
            lambda2=float(resolved["filters"]["lambda2"]),
            lambda3=float(resolved["filters"]["lambda3"]),
        ),
        grid=GridConfig(
            t0=float(resolved["grid"]["t0"]),
            h=float(resolved["grid"]["h"]),
            horizon=float(resolved["grid"]["horizon"]),
        ),
        stages=StageSchedule(
            freq_start=None if stages_d["freq_start"] is None else float(stages_d["freq_start"]),
            amp_start=float(stages_d["amp_start"]),
            gpebo_start=float(stages_d["gpebo_start"]),
            auto_switch=bool(stages_d["auto_switch"]),
            inject_true_theta=bool(stages_d["inject_true_theta"]),
            e_hat0=None if e_hat0 is None else [float(v) for v in e_hat0],
        ),
        mu=float(resolved["mu"]),
        eps_psi=float(cond["eps_psi"]),
        beta_gate=None if beta_gate is None else float(beta_gate),
        event_hold=float(cond["event_hold"]),
        decimate=int(resolved["output"]["decimate"]),
        summary=SummaryConfig(
            final_window_frac=float(resolved["summary"]["final_window_frac"]),
            omega_settle_frac=float(resolved["summary"]["omega_settle_frac"]),
            theta_settle_frac=float(resolved["summary"]["theta_settle_frac"]),
            x_settle_abs=float(resolved["summary"]["x_settle_abs"]),
        ),
        resolved=resolved,
    )
    return cfg.validate()


def config_hash(resolved: dict | None) -> str:
    """Digest of the fully resolved configuration; identical hash, identical run."""
    if resolved is None:
        return ""
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def apply_override(user: dict, dotted_key: str, value) -> dict:
    """Set one dotted-path key in a configuration dict (for sweeps)."""
    parts = dotted_key.split(".")
    node = DEFAULTS
    for i, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown configuration key: {'.'.join(parts[: i + 1])}")
        node = node[part]
    out = copy.deepcopy(user)
    cursor = out
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
        if not isinstance(cursor, dict):
            raise ConfigError(f"cannot override through non-mapping key: {dotted_key}")
    cursor[parts[-1]] = value
    return out
