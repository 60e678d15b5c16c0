"""Stage 3: finite-time state reconstruction through the fundamental matrix.

A shadow copy of the plant and the fundamental matrix of the estimated
closed-loop dynamics are propagated from the stage activation instant
(shadow state zero, fundamental matrix identity).  The delayed output then
gives a linear regression for the constant initial error: with
``g(t) = y(t) - z(t - d)`` and ``M = Phi_A(t - d)``,

    adj(M) g = det(M) * e0        (exact when the parameter estimates match),

so ``e0`` is found by componentwise gradient descent on the mixed scalar
regression.  A forgetting scalar ``w`` driven by the same excitation turns
the asymptotic estimate into a finite-time one once ``w`` falls below the
clipping level.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import IntegrationFault, OutOfHistoryError
from .estimators import adjugate, det_small
from .simcore import HistoryBuffer

__all__ = ["GpeboObserver"]

logger = logging.getLogger(__name__)

_COND_LIMIT = 1e12


class GpeboObserver:
    """Finite-time observer state: shadow system, fundamental matrix, error estimator."""

    def __init__(self, n: int, gamma3: float, mu: float, e_hat0=None):
        if not 1 <= n <= 4:
            raise ValueError(f"state dimension must be 1..4 (closed-form adjugates), got {n}")
        if not gamma3 > 0.0:
            raise ValueError(f"gamma3 must be positive, got {gamma3}")
        if not 0.0 < mu < 1.0:
            raise ValueError(f"clipping margin must lie in (0, 1), got {mu}")
        self.n = int(n)
        self.gamma3 = float(gamma3)
        self.mu = float(mu)
        self.e_hat0 = np.zeros(n) if e_hat0 is None else np.asarray(e_hat0, dtype=float).copy()
        if self.e_hat0.shape != (n,):
            raise ValueError(f"e_hat0 must have {n} entries")
        self.t_start: float | None = None
        self.z = np.zeros(n)
        self.phi_a = np.eye(n)
        self.e_hat = self.e_hat0.copy()
        self.w = 1.0
        self.t_c: float | None = None
        self.cond_warning = False
        self.z_hist: HistoryBuffer | None = None
        self.phi_hist: HistoryBuffer | None = None

    def activate(self, t_start: float, step: float, capacity: int | None = None) -> None:
        """Restart the observer clock: zero shadow state, identity fundamental matrix."""
        n = self.n
        self.t_start = float(t_start)
        self.z = np.zeros(n)
        self.phi_a = np.eye(n)
        self.e_hat = self.e_hat0.copy()
        self.w = 1.0
        self.t_c = None
        self.cond_warning = False
        self.z_hist = HistoryBuffer(t_start, step, n, capacity)
        self.phi_hist = HistoryBuffer(t_start, step, n * n, capacity)

    def record(self) -> None:
        """Store the current shadow state and fundamental matrix for delayed lookup."""
        self.z_hist.append(self.z)
        self.phi_hist.append(self.phi_a.ravel())

    def observer_derivatives(self, a_cl, bu):
        """Right sides of the shadow state and fundamental matrix dynamics."""
        a = np.asarray(a_cl, dtype=float)
        return a @ self.z + np.asarray(bu, dtype=float), a @ self.phi_a

    def advance(self, a_cl_of, bu_of, t: float, h: float) -> None:
        """One RK4 step of the coupled (z, Phi_A) pair sharing closed-loop evaluations."""
        n = self.n
        aug = np.empty((n, n + 1))
        aug[:, 0] = self.z
        aug[:, 1:] = self.phi_a

        def rhs(tt, m):
            out = a_cl_of(tt) @ m
            out[:, 0] += bu_of(tt)
            return out

        k1 = rhs(t, aug)
        k2 = rhs(t + 0.5 * h, aug + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, aug + (0.5 * h) * k2)
        k4 = rhs(t + h, aug + h * k3)
        aug = aug + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(aug).all():
            raise IntegrationFault(f"non-finite observer state at t={t:.6g}", sim_time=t)
        self.z = aug[:, 0].copy()
        self.phi_a = aug[:, 1:].copy()

    def build_state_regression(self, y, t: float, d: float):
        """Delayed regression triple ``(g, R, P)`` for the initial-error estimate."""
        if self.t_start is None:
            raise OutOfHistoryError("observer not activated")
        td = t - d
        if td < self.t_start - 1e-12:
            raise OutOfHistoryError(
                f"delayed lookup at t-d={td:.6g} precedes observer start {self.t_start:.6g}"
            )
        z_d = self.z_hist.at(td)
        m = self.phi_hist.at(td).reshape(self.n, self.n)
        g = np.asarray(y, dtype=float) - z_d
        adj_m = adjugate(m)
        p = det_small(m)
        r_vec = adj_m @ g
        self._check_conditioning(m, adj_m, p)
        return g, r_vec, p

    def e0_gradient_step(self, r_vec, p: float, h: float) -> np.ndarray:
        """Advance the componentwise initial-error estimator with shared regressor ``p``.

        Closed-form step of the held-coefficient dynamics, stable for any
        gain; with ``p = 0`` the estimate is untouched.
        """
        if p != 0.0:
            z_exp = self.gamma3 * p * p * h
            decay = math.exp(-z_exp)
            self.e_hat = self.e_hat * decay + (np.asarray(r_vec, dtype=float) / p) * (-math.expm1(-z_exp))
        return self.e_hat

    def advance_forgetting(self, p: float, h: float) -> float:
        """Decay the forgetting scalar by the excitation seen this step."""
        self.w *= math.exp(-self.gamma3 * p * p * h)
        return self.w

    def finite_time_combine(self):
        """Clipped finite-time combination of the current estimates.

        Returns ``(e_ft, w_c)``; once the forgetting scalar has crossed the
        clipping level, ``e_ft`` equals the true initial error exactly in
        the matched noise-free case.
        """
        w_c = self.w if self.w <= 1.0 - self.mu else 1.0 - self.mu
        e_ft = (self.e_hat - w_c * self.e_hat0) / (1.0 - w_c)
        return e_ft, w_c

    def state_estimate(self, e_ft) -> np.ndarray:
        """Current-state reconstruction from the shadow state and propagated error."""
        return self.z + self.phi_a @ np.asarray(e_ft, dtype=float)

    def note_clipping_crossed(self, t: float) -> None:
        if self.t_c is None and self.w <= 1.0 - self.mu:
            self.t_c = t

    def _check_conditioning(self, m, adj_m, p: float) -> None:
        if self.cond_warning:
            return
        # Frobenius bound on the condition number; cheap and within a factor n
        bound = math.inf
        if p != 0.0:
            bound = float(np.sqrt((m * m).sum()) * np.sqrt((adj_m * adj_m).sum())) / abs(p)
        if bound > _COND_LIMIT:
            self.cond_warning = True
            logger.warning(
                "fundamental matrix condition estimate %.3g exceeds %.1g; "
                "delayed regression may be unreliable", bound, _COND_LIMIT,
            )
