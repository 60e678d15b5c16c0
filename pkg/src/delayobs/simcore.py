"""Fixed-step time grid, RK4 kernel, and grid-aligned signal history.

Everything downstream (plant, filter bank, estimators, observer) integrates
on one shared uniform grid so that delayed lookups land exactly on stored
samples and repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IntegrationFault, OutOfHistoryError

__all__ = ["TimeGrid", "HistoryBuffer", "rk4_step", "history_at"]

# snap-to-sample tolerance, in fractions of one step
_GRID_SNAP = 1e-6
_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + k*h for k = 0..n_steps (both endpoints included).

    Times are always computed as t0 + k*h, never by accumulation, so the
    grid carries no rounding drift.
    """

    t0: float = 0.0
    h: float = 1e-3
    n_steps: int = 1

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")

    def time(self, k: int) -> float:
        return self.t0 + k * self.h

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1, dtype=float)

    @property
    def t_end(self) -> float:
        return self.time(self.n_steps)


class HistoryBuffer:
    """Record of a vector signal sampled on a uniform grid, with delayed lookup.

    ``at(tau)`` returns the stored sample when ``tau`` lands on a grid point
    and interpolates linearly between neighbours otherwise.  Queries outside
    the recorded range raise :class:`OutOfHistoryError`, which normally means
    a consumer was scheduled before its warm-up time.
    """

    def __init__(self, start: float, step: float, dim: int, capacity: int | None = None):
        if step <= 0.0:
            raise ValueError(f"step must be positive, got {step}")
        if dim < 1:
            raise ValueError(f"dim must be at least 1, got {dim}")
        self.start = float(start)
        self.step = float(step)
        self.dim = int(dim)
        cap = 64 if capacity is None else max(int(capacity), 1)
        self._data = np.empty((cap, self.dim), dtype=float)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def latest(self) -> float:
        if self._n == 0:
            raise OutOfHistoryError("history buffer is empty")
        return self.start + (self._n - 1) * self.step

    def append(self, values) -> None:
        row = np.asarray(values, dtype=float)
        if row.shape != (self.dim,):
            raise ValueError(f"expected a sample of dimension {self.dim}, got shape {row.shape}")
        if self._n == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self.dim), dtype=float)
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n] = row
        self._n += 1

    def value_at_index(self, k: int) -> np.ndarray:
        if not 0 <= k < self._n:
            raise OutOfHistoryError(f"sample index {k} outside recorded range [0, {self._n - 1}]")
        return self._data[k].copy()

    def at(self, tau: float) -> np.ndarray:
        if self._n == 0:
            raise OutOfHistoryError("history buffer is empty")
        pos = (tau - self.start) / self.step
        last = self._n - 1
        if pos < -_RANGE_TOL or pos > last + _RANGE_TOL:
            raise OutOfHistoryError(
                f"time {tau:.9g} outside recorded history [{self.start:.9g}, {self.latest:.9g}]"
            )
        k = int(round(pos))
        if abs(pos - k) <= _GRID_SNAP and 0 <= k <= last:
            return self._data[k].copy()
        lo = min(int(math.floor(pos)), last - 1)
        lo = max(lo, 0)
        frac = pos - lo
        return (1.0 - frac) * self._data[lo] + frac * self._data[lo + 1]


def history_at(buf: HistoryBuffer, tau: float) -> np.ndarray:
    """Sample a recorded signal at time ``tau`` (exact on grid, linear otherwise)."""
    return buf.at(tau)


def rk4_step(state, deriv: Callable, t: float, h: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step for ``x' = deriv(t, x)``.

    Deterministic for identical inputs.  A non-finite result raises
    :class:`IntegrationFault` carrying the time and the offending component.
    """
    if not h > 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(state, dtype=float)
    k1 = np.asarray(deriv(t, x), dtype=float)
    k2 = np.asarray(deriv(t + 0.5 * h, x + (0.5 * h) * k1), dtype=float)
    k3 = np.asarray(deriv(t + 0.5 * h, x + (0.5 * h) * k2), dtype=float)
    k4 = np.asarray(deriv(t + h, x + h * k3), dtype=float)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        idx = _first_bad_component(out, (k1, k2, k3, k4))
        raise IntegrationFault(
            f"non-finite derivative while stepping from t={t:.6g} (component {idx})",
            sim_time=t,
        )
    return out


def _first_bad_component(out: np.ndarray, slopes) -> int:
    for k in slopes:
        bad = np.flatnonzero(~np.isfinite(k))
        if bad.size:
            return int(bad[0])
    bad = np.flatnonzero(~np.isfinite(out))
    return int(bad[0]) if bad.size else -1
