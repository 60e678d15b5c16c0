"""Ground-truth plant: dynamics, sinusoidal parameter channels, delayed output.

The simulated system is ``x' = A(y, u, t) x + B(y, u, t) u + sum_i theta_i(t) Q_i x``
with ``theta_i(t) = a1_i sin(w_i t) + a2_i cos(w_i t)`` and the measurement
``y(t) = x(t - d)`` for a known constant delay ``d``.  The coupling matrices
``Q_i`` must be symmetric, mutually annihilating, and idempotent up to an
integer scale; those conditions are validated numerically up front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolation, ConfigError, IntegrationFault, OutOfHistoryError
from .simcore import HistoryBuffer

__all__ = [
    "PlantPreset",
    "PlantConfig",
    "build_preset",
    "paper_plant",
    "validate_assumptions",
    "active_row_sets",
    "theta_true",
    "plant_derivative",
    "measure",
    "PRESETS",
]

_STRUCT_TOL = 1e-9


@dataclass(frozen=True)
class PlantPreset:
    """Named drift maps A(y, u, t), B(y, u, t) and the known input signal u(t).

    ``uses_y`` declares whether the maps actually read the measurement; maps
    that do force delayed evaluations to wait one extra delay interval for
    the measurement history to cover their argument.
    """

    name: str
    n: int
    a_map: Callable
    b_map: Callable
    u_sig: Callable
    uses_y: bool = False


def _paper_preset(params: dict) -> PlantPreset:
    if params:
        raise ConfigError(f"preset 'paper' takes no parameters, got {sorted(params)}")

    def a_map(y, u, t):
        return np.array(
            [
                [0.0, 0.1 - 0.1 * math.sin(t)],
                [-1.0, -1.0 + 0.5 * math.cos(2.0 * t)],
            ]
        )

    b_const = np.array([-1.0, 4.0])

    def b_map(y, u, t):
        return b_const

    def u_sig(t):
        return 2.0 * math.sin(t)

    return PlantPreset("paper", 2, a_map, b_map, u_sig, uses_y=False)


def _diag_preset(params: dict) -> PlantPreset:
    allowed = {"a", "b", "u_amp", "u_freq"}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"preset 'diag' does not accept {sorted(unknown)}; allowed: {sorted(allowed)}")
    if "a" not in params:
        raise ConfigError("preset 'diag' requires parameter 'a' (diagonal drift entries)")
    diag = np.asarray(params["a"], dtype=float)
    if diag.ndim != 1 or diag.size < 1:
        raise ConfigError("preset 'diag': parameter 'a' must be a non-empty list of reals")
    n = diag.size
    b_vec = np.asarray(params.get("b", np.zeros(n)), dtype=float)
    if b_vec.shape != (n,):
        raise ConfigError(f"preset 'diag': parameter 'b' must have {n} entries")
    u_amp = float(params.get("u_amp", 0.0))
    u_freq = float(params.get("u_freq", 1.0))
    a_const = np.diag(diag)

    def a_map(y, u, t):
        return a_const

    def b_map(y, u, t):
        return b_vec

    def u_sig(t):
        return u_amp * math.sin(u_freq * t)

    return PlantPreset("diag", n, a_map, b_map, u_sig, uses_y=False)


PRESETS = {"paper": _paper_preset, "diag": _diag_preset}


def build_preset(name: str, params: dict | None = None) -> PlantPreset:
    if name not in PRESETS:
        raise ConfigError(f"unknown plant preset '{name}'; available: {sorted(PRESETS)}")
    return PRESETS[name](dict(params or {}))


def validate_assumptions(q_mats, tol: float = _STRUCT_TOL) -> list[int]:
    """Check the structural conditions on the coupling matrices.

    Each ``Q_i`` must be symmetric and satisfy ``Q_i Q_j = 0`` for i != j and
    ``Q_i^2 = k_i Q_i`` for a positive integer ``k_i``.  Returns the recovered
    scales ``k_i``; any failure raises :class:`AssumptionViolation` naming the
    matrix and the broken condition.
    """
    mats = [np.asarray(q, dtype=float) for q in q_mats]
    if not mats:
        raise AssumptionViolation("at least one coupling matrix is required")
    n = mats[0].shape[0]
    ks: list[int] = []
    for i, q in enumerate(mats, start=1):
        if q.shape != (n, n):
            raise AssumptionViolation(f"Q_{i} must be {n}x{n} square, got shape {q.shape}")
        if np.abs(q - q.T).max() > tol:
            raise AssumptionViolation(f"Q_{i} is not symmetric")
        trace = float(np.trace(q))
        if abs(trace) <= tol:
            raise AssumptionViolation(f"Q_{i} has zero trace, cannot recover its idempotency scale")
        q2 = q @ q
        k_est = float(np.trace(q2)) / trace
        k_int = round(k_est)
        if abs(k_est - k_int) > 1e-6 or k_int < 1:
            raise AssumptionViolation(
                f"Q_{i}^2 = k Q_{i} requires a positive integer k, recovered k={k_est:.6g}"
            )
        if np.abs(q2 - k_int * q).max() > tol:
            raise AssumptionViolation(f"Q_{i}^2 differs from {k_int} * Q_{i} beyond tolerance {tol}")
        ks.append(int(k_int))
    for i in range(len(mats)):
        for j in range(len(mats)):
            if i != j and np.abs(mats[i] @ mats[j]).max() > tol:
                raise AssumptionViolation(f"Q_{i + 1} Q_{j + 1} is not zero")
    return ks


def active_row_sets(q_mats, tol: float = _STRUCT_TOL) -> list[list[int]]:
    """Rows where each coupling matrix acts; sets must not overlap across channels.

    Row-disjointness is what lets every channel read its own scalar equations
    out of the shared vector regression, so overlap is rejected here rather
    than producing silently coupled estimators.
    """
    rows: list[list[int]] = []
    seen: dict[int, int] = {}
    for i, q in enumerate(q_mats, start=1):
        mat = np.asarray(q, dtype=float)
        active = [r for r in range(mat.shape[0]) if np.abs(mat[r]).max() > tol]
        if not active:
            raise AssumptionViolation(f"Q_{i} has no active rows")
        for r in active:
            if r in seen:
                raise AssumptionViolation(
                    f"row {r + 1} is driven by both Q_{seen[r]} and Q_{i}; "
                    "channel regressions require disjoint active rows"
                )
            seen[r] = i
        rows.append(active)
    return rows


@dataclass
class PlantConfig:
    """Validated description of the simulated truth system."""

    preset: PlantPreset
    q_mats: list[np.ndarray]
    omega: list[float]
    a_coef: list[tuple[float, float]]
    d: float
    x0: np.ndarray
    k_scales: list[int] = field(default_factory=list)
    active_rows: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.q_mats = [np.asarray(q, dtype=float) for q in self.q_mats]
        self.x0 = np.asarray(self.x0, dtype=float)
        n = self.preset.n
        m = len(self.q_mats)
        if m > n:
            raise AssumptionViolation(f"{m} parameter channels exceed the state dimension {n}")
        if len(self.omega) != m or len(self.a_coef) != m:
            raise ConfigError(
                f"omega and a_coef must list one entry per channel ({m}), "
                f"got {len(self.omega)} and {len(self.a_coef)}"
            )
        for i, w in enumerate(self.omega, start=1):
            if not w > 0.0:
                raise ConfigError(f"omega[{i}] must be positive, got {w}")
        if not self.d > 0.0:
            raise ConfigError(f"delay must be positive, got {self.d}")
        if self.x0.shape != (n,):
            raise ConfigError(f"x0 must have {n} entries, got shape {self.x0.shape}")
        if not np.isfinite(self.x0).all():
            raise ConfigError("x0 must be finite")
        if not self.k_scales:
            self.k_scales = validate_assumptions(self.q_mats)
        if not self.active_rows:
            self.active_rows = active_row_sets(self.q_mats)

    @property
    def n(self) -> int:
        return self.preset.n

    @property
    def m(self) -> int:
        return len(self.q_mats)


def paper_plant() -> PlantConfig:
    """The built-in benchmark configuration: 2 states, 2 channels, delay 2 s."""
    return PlantConfig(
        preset=build_preset("paper"),
        q_mats=[np.diag([1.0, 0.0]), np.diag([0.0, 1.0])],
        omega=[5.0, 5.0],
        a_coef=[(0.3, 3.0), (0.2, 2.0)],
        d=2.0,
        x0=np.array([-5.0, 5.0]),
    )


def theta_true(cfg: PlantConfig, i: int, t: float) -> float:
    """True parameter value of channel ``i`` (0-based) at time ``t``."""
    a1, a2 = cfg.a_coef[i]
    w = cfg.omega[i]
    return a1 * math.sin(w * t) + a2 * math.cos(w * t)


def plant_derivative(cfg: PlantConfig, x, t: float, y=None) -> np.ndarray:
    """Truth dynamics right side at time ``t``.

    ``y`` is the delayed output the drift maps may read; presets that ignore
    it accept ``None``.
    """
    if cfg.preset.uses_y and y is None:
        raise ConfigError(f"preset '{cfg.preset.name}' reads the measurement; supply y")
    u = cfg.preset.u_sig(t)
    xv = np.asarray(x, dtype=float)
    dx = cfg.preset.a_map(y, u, t) @ xv + cfg.preset.b_map(y, u, t) * u
    for i, q in enumerate(cfg.q_mats):
        dx = dx + theta_true(cfg, i, t) * (q @ xv)
    if not np.isfinite(dx).all():
        bad = int(np.flatnonzero(~np.isfinite(dx))[0])
        raise IntegrationFault(f"non-finite plant derivative at t={t:.6g} (component {bad})", sim_time=t)
    return dx


def measure(history: HistoryBuffer, t: float, d: float) -> np.ndarray:
    """Delayed output ``y(t) = x(t - d)`` read from the recorded truth."""
    if t < d - 1e-12:
        raise OutOfHistoryError(f"measurement undefined before t = d = {d:.6g} (asked at t={t:.6g})")
    return history.at(t - d)
