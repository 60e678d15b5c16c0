"""Stage 2: identify the sinusoid coefficient pairs of each parameter channel.

With the channel frequencies known, the delayed dynamics become linear in
the coefficient pairs.  Filtering the delayed state and drift with a
first-order low-pass turns each active row into a scalar regression

    ycal_r = a1 * G[chi1 * psi_r] + a2 * G[chi2 * psi_r],

where ``G`` is the low-pass, ``chi`` the known delayed-phase sin/cos pair,
and ``psi = Q_i y``.  The regressor components are the filtered products;
the filter does not commute with time-varying multiplication, so filtering
the factors separately would bias the fit.  Regressor extension and mixing
then decouples the two coefficients into independent scalar estimates.

All stage filters run on trapezoid-averaged inputs (retro-corrected one
step late, which the delay makes causal), keeping the sampling bias of the
fast oscillatory products second order in the step size.
"""

from __future__ import annotations

import math

import numpy as np

from .estimators import DremState, GradientState, drem_mix, drem_step_targets, gradient_step
from .filters import SmoothedFilter, make_first_order_filter

__all__ = ["AmpChannel", "AmpStage", "compute_chi", "reconstruct_theta", "eta_hat"]


def compute_chi(omega_hat: float, t: float, d: float) -> np.ndarray:
    """Unit regressor direction at the delayed phase: (sin, cos) of ``omega_hat * (t - d)``."""
    phase = omega_hat * (t - d)
    return np.array([math.sin(phase), math.cos(phase)])


def reconstruct_theta(a_hat, omega_hat: float, t: float) -> float:
    """Parameter value at the current (undelayed) phase from estimated coefficients."""
    return float(a_hat[0]) * math.sin(omega_hat * t) + float(a_hat[1]) * math.cos(omega_hat * t)


def eta_hat(a_hat, omega_hat: float, t: float, d: float) -> float:
    """Delayed-phase reconstruction; equals ``reconstruct_theta`` shifted by the delay."""
    return reconstruct_theta(a_hat, omega_hat, t - d)


class AmpChannel:
    """Coefficient estimator for one channel: product filters, extension, mixing."""

    def __init__(self, index: int, qi, rows, omega_hat: float,
                 gamma2: float, lam2: float, lam3: float):
        self.index = int(index)
        self.qi = np.asarray(qi, dtype=float)
        self.rows = list(rows)
        self.omega_hat = float(omega_hat)
        self.lam2 = float(lam2)
        self.prod_filters: list[tuple[SmoothedFilter, SmoothedFilter]] = [
            (SmoothedFilter(make_first_order_filter(lam2)), SmoothedFilter(make_first_order_filter(lam2)))
            for _ in self.rows
        ]
        self.drem = DremState.zero(float(lam3))
        self.grads = [GradientState(0.0, float(gamma2)), GradientState(0.0, float(gamma2))]
        self._prev_targets: tuple[np.ndarray, np.ndarray] | None = None
        # convergence detector bookkeeping
        self._resid_bad_t: float | None = None
        self._excited_t: float | None = None

    @property
    def a_hat(self) -> np.ndarray:
        return np.array([self.grads[0].v_hat, self.grads[1].v_hat])

    def build_regression(self, ycal_vec, y, chi, t: float, h: float):
        """Channel share of the filtered regression: measurement rows and regressor.

        ``ycal_vec`` is the stage-level filtered measurement vector; the
        channel reads its active rows and pairs them with the filtered
        products of ``chi`` and its own ``psi = Q_i y`` components.
        """
        psi = self.qi @ np.asarray(y, dtype=float)
        ycal_i = np.array([float(ycal_vec[r]) for r in self.rows])
        phi_i = np.empty((len(self.rows), 2))
        for j, r in enumerate(self.rows):
            fs, fc = self.prod_filters[j]
            phi_i[j, 0] = fs.step(float(chi[0]) * psi[r], t, h)
            phi_i[j, 1] = fc.step(float(chi[1]) * psi[r], t, h)
        return ycal_i, phi_i

    def estimate_step(self, ycal_i, phi_i, t: float, h: float):
        """Mix the current extension state, then advance extension and estimates.

        Returns ``(z, delta)`` evaluated at the current time, before the
        update driven by this sample takes effect.  Extension targets are
        trapezoid-averaged across consecutive samples.
        """
        z, delta = drem_mix(self.drem)
        self._update_detector(z, delta, t)
        target_y = phi_i.T @ ycal_i
        target_omega = phi_i.T @ phi_i
        if self._prev_targets is not None:
            fed_y = 0.5 * (self._prev_targets[0] + target_y)
            fed_omega = 0.5 * (self._prev_targets[1] + target_omega)
        else:
            fed_y, fed_omega = target_y, target_omega
        self._prev_targets = (target_y, target_omega)
        self.drem = drem_step_targets(self.drem, fed_y, fed_omega, h)
        for kc in range(2):
            self.grads[kc] = gradient_step(self.grads[kc], delta, float(z[kc]), h)
        return z, delta

    def theta_hat(self, t: float) -> float:
        return reconstruct_theta(self.a_hat, self.omega_hat, t)

    def _update_detector(self, z, delta: float, t: float) -> None:
        if self._resid_bad_t is None:
            self._resid_bad_t = t
        a = self.a_hat
        for kc in range(2):
            if abs(delta * a[kc] - z[kc]) >= 1e-3 * (1.0 + abs(z[kc])):
                self._resid_bad_t = t
                break
        if abs(delta) > 1e-6:
            self._excited_t = t

    def converged(self, t: float) -> bool:
        """Mixed residuals small for one second with recent excitation."""
        if self._resid_bad_t is None or self._excited_t is None:
            return False
        return (t - self._resid_bad_t >= 1.0) and (t - self._excited_t <= 1.0)


class AmpStage:
    """All coefficient channels plus the shared filtered-measurement bank.

    The measurement vector is assembled componentwise as
    ``ycal = G_diff[y] - G[f_d]`` with the differentiating and plain
    first-order blocks at the same pole, so no signal is ever differentiated
    numerically.
    """

    def __init__(self, plant_cfg, omega_hats, gamma2: float, lam2: float, lam3: float, d: float):
        n = plant_cfg.n
        self.d = float(d)
        self.diff_filters = [
            SmoothedFilter(make_first_order_filter(lam2, differentiating=True)) for _ in range(n)
        ]
        self.plain_filters = [SmoothedFilter(make_first_order_filter(lam2)) for _ in range(n)]
        self.channels = [
            AmpChannel(i, plant_cfg.q_mats[i], plant_cfg.active_rows[i],
                       float(omega_hats[i]), gamma2, lam2, lam3)
            for i in range(plant_cfg.m)
        ]

    def filter_ycal(self, y, f_d, t: float, h: float) -> np.ndarray:
        out = np.empty(len(self.diff_filters))
        for r, (fd_blk, fp_blk) in enumerate(zip(self.diff_filters, self.plain_filters)):
            out[r] = fd_blk.step(float(y[r]), t, h) - fp_blk.step(float(f_d[r]), t, h)
        return out

    def step(self, y, f_d, t: float, h: float) -> list[dict]:
        """Advance every channel one sample; returns per-channel signal records."""
        ycal = self.filter_ycal(y, f_d, t, h)
        records = []
        for ch in self.channels:
            chi = compute_chi(ch.omega_hat, t, self.d)
            a_pre = ch.a_hat
            ycal_i, phi_i = ch.build_regression(ycal, y, chi, t, h)
            z, delta = ch.estimate_step(ycal_i, phi_i, t, h)
            records.append(
                {
                    "chi": chi,
                    "ycal": float(ycal_i[0]),
                    "phi": phi_i[0].copy(),
                    "z": z,
                    "delta": delta,
                    "a_hat": a_pre,
                    "theta_hat": reconstruct_theta(a_pre, ch.omega_hat, t),
                }
            )
        return records

    def converged(self, t: float) -> bool:
        return all(ch.converged(t) for ch in self.channels)
