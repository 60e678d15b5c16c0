"""Reusable estimation primitives.

Scalar gradient estimator for regressions ``q = phi * v``, the regressor
extension/mixing pair that turns a small vector regression into independent
scalar ones, and closed-form adjugates/determinants for matrices up to 4x4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimatorFault

__all__ = [
    "GradientState",
    "gradient_step",
    "DremState",
    "drem_step",
    "drem_step_targets",
    "drem_mix",
    "adjugate",
    "det_small",
]


@dataclass
class GradientState:
    """State of one scalar gradient estimator: current estimate and gain."""

    v_hat: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"adaptation gain must be positive, got {self.gamma}")
        if not math.isfinite(self.v_hat):
            raise ValueError(f"estimate must be finite, got {self.v_hat}")


def gradient_step(s: GradientState, phi: float, q: float, h: float) -> GradientState:
    """Advance ``v_hat' = gamma * phi * (q - phi * v_hat)`` one step with held (phi, q).

    Uses the closed-form solution of the held-coefficient step, so the update
    is stable for any gain and reproduces the exponential error decay
    ``v_err(t) = v_err(0) * exp(-gamma * int(phi^2))`` exactly on stationary
    regressions.  With ``phi = 0`` the estimate is untouched.
    """
    if not (math.isfinite(phi) and math.isfinite(q)):
        raise EstimatorFault(f"non-finite regression pair phi={phi}, q={q}")
    if not h > 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    if phi == 0.0:
        return s
    z = s.gamma * phi * phi * h
    v = s.v_hat * math.exp(-z) + (q / phi) * (-math.expm1(-z))
    return GradientState(v, s.gamma)


@dataclass
class DremState:
    """Extension filter state: measurement vector Y, gram matrix Omega, shared pole."""

    y: np.ndarray
    omega: np.ndarray
    lambda3: float

    @classmethod
    def zero(cls, lambda3: float, size: int = 2) -> "DremState":
        if not lambda3 > 0.0:
            raise ValueError(f"forgetting gain must be positive, got {lambda3}")
        return cls(np.zeros(size), np.zeros((size, size)), float(lambda3))


def _rk4_decay(rate_h: float) -> float:
    # RK4 one-step factor for x' = -rate x, i.e. the degree-4 Taylor of exp(-rate*h)
    z = -rate_h
    return 1.0 + z + z * z / 2.0 + z**3 / 6.0 + z**4 / 24.0


def drem_step(s: DremState, phi, ycal, h: float) -> DremState:
    """Advance ``Y' = -lam (Y - Phi^T ycal)`` and ``Omega' = -lam (Omega - Phi^T Phi)`` by RK4.

    ``phi`` may be one regressor row (shape (p,)) with scalar ``ycal``, or a
    stack of rows (shape (rows, p)) with a matching measurement vector.
    """
    phi_m = np.atleast_2d(np.asarray(phi, dtype=float))
    ycal_v = np.atleast_1d(np.asarray(ycal, dtype=float))
    if not (np.isfinite(phi_m).all() and np.isfinite(ycal_v).all()):
        raise EstimatorFault("non-finite extension inputs")
    return drem_step_targets(s, phi_m.T @ ycal_v, phi_m.T @ phi_m, h)


def drem_step_targets(s: DremState, target_y, target_omega, h: float) -> DremState:
    """Advance the extension filters toward explicit (held) targets by RK4."""
    if not h > 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    decay = _rk4_decay(s.lambda3 * h)
    return DremState(
        decay * s.y + (1.0 - decay) * np.asarray(target_y, dtype=float),
        decay * s.omega + (1.0 - decay) * np.asarray(target_omega, dtype=float),
        s.lambda3,
    )


def drem_mix(s: DremState):
    """Mix the extended regression into per-coefficient scalars.

    Returns ``(Z, Delta)`` with ``Z = adj(Omega) Y`` and ``Delta = det(Omega)``;
    whenever ``Y = Omega a`` holds exactly, each ``Z[k] = Delta * a[k]``.
    ``Delta = 0`` is a legal, unexcited output.
    """
    return adjugate(s.omega) @ s.y, det_small(s.omega)


def det_small(m) -> float:
    """Determinant by cofactor expansion for square matrices up to 4x4."""
    a = np.asarray(m, dtype=float)
    k = a.shape[0]
    if a.shape != (k, k) or k > 4 or k < 1:
        raise ValueError(f"expected a square matrix of dimension 1..4, got shape {a.shape}")
    return _det(a, k)


def _det(a: np.ndarray, k: int) -> float:
    if k == 1:
        return float(a[0, 0])
    if k == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    if k == 3:
        return float(
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )
    total = 0.0
    for j in range(4):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1.0) ** j * a[0, j] * _det(minor, 3)
    return float(total)


def adjugate(m) -> np.ndarray:
    """Adjugate by closed-form cofactors, defined for singular matrices too.

    Satisfies ``adjugate(M) @ M == det(M) * I`` in exact arithmetic for
    dimensions 1 to 4.
    """
    a = np.asarray(m, dtype=float)
    k = a.shape[0]
    if a.shape != (k, k) or k > 4 or k < 1:
        raise ValueError(f"expected a square matrix of dimension 1..4, got shape {a.shape}")
    if k == 1:
        return np.array([[1.0]])
    if k == 2:
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
    cof = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = (-1.0) ** (i + j) * _det(minor, k - 1)
    return cof.T
