"""Stage 1: identify each channel frequency from the delayed output.

Per channel, the quadratic output ``psi = y^T Q y`` is log-transformed; the
slope identity ``d(ln psi)/dt = beta + 2 k eta`` turns the unknown harmonic
factor ``eta`` into a measurable combination of ``xi = ln psi`` and
``beta = alpha / psi``.  Pushing both signals through the third-order
low-pass bank yields a scalar linear regression ``q = phi * v`` whose
parameter is the squared frequency, estimated by gradient descent.

``beta`` has a ``1/x``-type singularity wherever the active output
component crosses zero, and the positivity requirement on ``psi`` only
guarantees sampled values stay off the singularity, not that they are far
from it.  Point-sampling such a signal into the filters leaves an O(1)
spurious impulse per crossing regardless of the step size, which buries
the regression.  The channel therefore conditions its filter inputs:
every step is retro-corrected to the trapezoid average (an exact one-step
fix, since the discrete filter map is linear in the held input), and
intervals containing a crossing or beta beyond a gate use principal-value
averages built from the endpoint log-outputs with the smooth harmonic part
extrapolated from neighbouring clean samples.  The gradient additionally
ignores samples inside a short cooldown window after such events.  On
trajectories that respect the positivity assumption with margin the
conditioning never engages beyond the trapezoid averaging.
"""

from __future__ import annotations

import math
from collections import deque
from typing import NamedTuple

import numpy as np

from .errors import DegeneracyError
from .estimators import GradientState, gradient_step
from .filters import FilterBlock, make_cascade_filter

__all__ = [
    "FreqSignals",
    "FreqChannel",
    "compute_psi",
    "compute_beta",
    "estimate_omega",
    "DEFAULT_EPS_PSI",
    "DEFAULT_BETA_GATE",
    "DEFAULT_EVENT_HOLD",
]

DEFAULT_EPS_PSI = 1e-8
DEFAULT_BETA_GATE = 40.0
DEFAULT_EVENT_HOLD = 2.0


class FreqSignals(NamedTuple):
    psi: float
    xi: float
    beta: float
    q: float
    phi: float
    v_hat: float
    omega_hat: float


def compute_psi(y, qj, eps: float = DEFAULT_EPS_PSI) -> float:
    """Quadratic output ``y^T Q_j y``; raises if positivity is lost.

    The positivity requirement cannot be checked ahead of a run, so it is
    enforced here, sample by sample, before any logarithm is taken.
    """
    yv = np.asarray(y, dtype=float)
    val = float(yv @ (np.asarray(qj, dtype=float) @ yv))
    if val <= eps:
        raise DegeneracyError(
            f"quadratic output {val:.6g} at or below floor {eps:.1g}; "
            "the log transform is undefined here"
        )
    return val


def compute_beta(f_d, y, qj, psi: float, eps: float = DEFAULT_EPS_PSI) -> float:
    """Known drift contribution to the log-output slope: ``(f^T Q y + y^T Q f) / psi``."""
    if psi <= eps:
        raise DegeneracyError(f"quadratic output {psi:.6g} at or below floor {eps:.1g}")
    q = np.asarray(qj, dtype=float)
    fv = np.asarray(f_d, dtype=float)
    yv = np.asarray(y, dtype=float)
    alpha = float(fv @ (q @ yv)) + float(yv @ (q @ fv))
    return alpha / psi


def estimate_omega(v_hat: float) -> float:
    """Frequency from the squared-frequency estimate, sign-guarded."""
    return math.sqrt(abs(v_hat))


def _segment_avg_log_abs(s0: float, s1: float) -> float:
    # average of ln|s| over one interval with s varying linearly from s0 to s1;
    # finite through a sign change (principal value of the log integral)
    if s0 == s1:
        return math.log(abs(s0))

    def antider(s: float) -> float:
        return s * math.log(abs(s)) - s if s != 0.0 else 0.0

    return (antider(s1) - antider(s0)) / (s1 - s0)


class FreqChannel:
    """One frequency-identification channel: filter bank plus gradient estimator.

    The regression pair is assembled as

        q   = [lam^3 p^3 / (p+lam)^3] xi  -  [lam^3 p^2 / (p+lam)^3] beta
        phi = [lam^3 / (p+lam)^3] beta    -  [lam^3 p / (p+lam)^3] xi

    so that ``q = omega^2 * phi`` up to exponentially decaying filter
    transients.  A convergence detector (sustained small residual plus
    recent excitation) supports automatic stage switching.
    """

    def __init__(self, index: int, qj, gamma1: float, lam1: float, k_scale: int = 1,
                 active_row: int = 0, eps_psi: float = DEFAULT_EPS_PSI,
                 beta_gate: float = DEFAULT_BETA_GATE, event_hold: float = DEFAULT_EVENT_HOLD):
        self.index = int(index)
        self.qj = np.asarray(qj, dtype=float)
        self.lam1 = float(lam1)
        self.k_scale = float(k_scale)
        self.active_row = int(active_row)
        self.eps_psi = float(eps_psi)
        self.beta_gate = math.inf if beta_gate is None else float(beta_gate)
        self.event_hold = float(event_hold)
        self.f_xi3: FilterBlock = make_cascade_filter(lam1, 3)
        self.f_xi1: FilterBlock = make_cascade_filter(lam1, 1)
        self.f_b2: FilterBlock = make_cascade_filter(lam1, 2)
        self.f_b0: FilterBlock = make_cascade_filter(lam1, 0)
        self.grad = GradientState(0.0, float(gamma1))
        self.omega_hat = 0.0
        # previous-sample bookkeeping for the input conditioning
        self._s_prev: float | None = None
        self._xi_prev = 0.0
        self._beta_prev = 0.0
        self._eta_window: deque[tuple[float, float]] = deque()
        self._t_event = -math.inf
        # convergence detector bookkeeping
        self._resid_bad_t: float | None = None
        self._last_excited_t: float | None = None

    @property
    def v_hat(self) -> float:
        return self.grad.v_hat

    def step(self, y, f_d, t: float, h: float) -> FreqSignals:
        """Process the sample at time ``t`` and advance the estimator one step.

        Returned estimator values (``v_hat``, ``omega_hat``) are the states
        at ``t``, before the update driven by this sample takes effect.
        """
        try:
            psi = compute_psi(y, self.qj, self.eps_psi)
        except DegeneracyError as err:
            raise DegeneracyError(f"channel {self.index + 1}: {err.args[0]}", sim_time=t) from None
        xi = math.log(psi)
        beta = compute_beta(f_d, y, self.qj, psi, self.eps_psi)
        s = float(self.qj[self.active_row] @ np.asarray(y, dtype=float))
        self._condition_inputs(s, xi, beta, t, h)

        q = self.f_xi3.output(xi) - self.f_b2.output(beta)
        phi = self.f_b0.output(beta) - self.f_xi1.output(xi)
        v_pre = self.grad.v_hat
        omega_pre = self.omega_hat
        if abs(beta) <= self.beta_gate and (t - self._t_event) >= self.event_hold:
            self._update_detector(q, phi, v_pre, t)
            self.grad = gradient_step(self.grad, phi, q, h)
            self.omega_hat = estimate_omega(self.grad.v_hat)
        for blk, u in ((self.f_xi3, xi), (self.f_xi1, xi), (self.f_b2, beta), (self.f_b0, beta)):
            blk.advance(u, h)
        self._s_prev, self._xi_prev, self._beta_prev = s, xi, beta
        return FreqSignals(psi, xi, beta, q, phi, v_pre, omega_pre)

    def _condition_inputs(self, s: float, xi: float, beta: float, t: float, h: float) -> None:
        """Retro-correct the interval just integrated to its average inputs.

        Smooth intervals get trapezoid averages; intervals with a sign
        crossing or gated beta get principal-value averages, with the smooth
        harmonic part of the slope extrapolated from recent clean samples.
        """
        if self._s_prev is None:
            return
        xi_prev, beta_prev = self._xi_prev, self._beta_prev
        crossing = self._s_prev * s < 0.0
        singular = crossing or max(abs(beta_prev), abs(beta)) > self.beta_gate
        t_mid = t - 0.5 * h
        if singular:
            self._t_event = t
            beta_bar = (xi - xi_prev) / h - 2.0 * self.k_scale * self._eta_extrapolated(t_mid)
            if crossing:
                xi_bar = 2.0 * _segment_avg_log_abs(self._s_prev, s) + (xi - 2.0 * math.log(abs(s)))
            else:
                xi_bar = 0.5 * (xi_prev + xi)
        else:
            xi_bar = 0.5 * (xi_prev + xi)
            beta_bar = 0.5 * (beta_prev + beta)
            eta_new = ((xi - xi_prev) / h - beta_bar) / (2.0 * self.k_scale)
            win = self._eta_window
            if not win or t_mid > win[-1][0]:
                win.append((t_mid, eta_new))
                while t_mid - win[0][0] > 0.12:
                    win.popleft()
        d_xi = xi_bar - xi_prev
        d_beta = beta_bar - beta_prev
        self.f_xi3.amend_last_input(d_xi, h)
        self.f_xi1.amend_last_input(d_xi, h)
        self.f_b2.amend_last_input(d_beta, h)
        self.f_b0.amend_last_input(d_beta, h)

    def _eta_extrapolated(self, tau: float) -> float:
        """Smooth slope component at ``tau`` from recent clean samples.

        Fits a harmonic at the channel's current frequency estimate through
        the newest clean value and one a short gap back.  The short gap and
        short extrapolation span keep the fit robust to sizeable frequency
        error while modelling the curvature a linear extrapolation misses;
        the linear form remains as the degenerate-estimate fallback.
        """
        win = self._eta_window
        if not win:
            return 0.0
        t_a, eta_a = win[-1]
        if len(win) < 2:
            return eta_a
        # anchor the rate on a ~0.05 s baseline
        t_b, eta_b = win[-2]
        for t_old, eta_old in reversed(win):
            if t_a - t_old >= 0.05:
                t_b, eta_b = t_old, eta_old
                break
        gap = t_a - t_b
        if gap <= 0.0:
            return eta_a
        dt = tau - t_a
        w = self.omega_hat
        if w > 0.5 and abs(math.sin(w * gap)) > 0.05:
            rate = w * (eta_a * math.cos(w * gap) - eta_b) / math.sin(w * gap)
            return eta_a * math.cos(w * dt) + (rate / w) * math.sin(w * dt)
        return eta_a + (eta_a - eta_b) / gap * dt

    def _update_detector(self, q: float, phi: float, v_hat: float, t: float) -> None:
        if self._resid_bad_t is None:
            self._resid_bad_t = t
        if abs(q - phi * v_hat) >= 1e-3 * (1.0 + abs(q)):
            self._resid_bad_t = t
        if abs(phi) > 0.01:
            self._last_excited_t = t

    def converged(self, t: float) -> bool:
        """Residual small for one second and excitation seen within one period."""
        if self._resid_bad_t is None or self._last_excited_t is None:
            return False
        if t - self._resid_bad_t < 1.0:
            return False
        window = 2.0 * math.pi / self.omega_hat if self.omega_hat > 1e-6 else math.inf
        return t - self._last_excited_t <= window
