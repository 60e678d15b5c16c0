"""State-space realizations of the scalar filter bank.

Two families are supported: the third-order low-pass cascade
``lam^3 * p^r / (p + lam)^3`` for numerator powers r = 0..3, and the
first-order pair ``lam / (p + lam)`` and ``lam * p / (p + lam)``.
Numerator powers are absorbed by polynomial division so only proper
dynamics are ever integrated; nothing is differentiated numerically.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import IntegrationFault, InvalidFilterError

__all__ = ["FilterBlock", "make_cascade_filter", "make_first_order_filter", "filter_step"]


class FilterBlock:
    """Proper SISO block ``x' = a x + b u``, ``y = c x + d_ff u``.

    Stepping holds the input over one interval and applies the RK4 map of
    the held-input system.  That map is linear in (state, input), so it is
    precomputed once per step size and each step costs a single small
    matrix-vector product.
    """

    __slots__ = ("a", "b", "c", "d_ff", "lam", "r", "state", "_h", "_step_mat", "_step_vec")

    def __init__(self, a, b, c, d_ff: float, lam: float, r: int):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.d_ff = float(d_ff)
        self.lam = float(lam)
        self.r = int(r)
        self.state = np.zeros(self.b.shape[0], dtype=float)
        self._h = None
        self._step_mat = None
        self._step_vec = None

    @property
    def order(self) -> int:
        return self.b.shape[0]

    def reset(self) -> None:
        self.state = np.zeros(self.order, dtype=float)

    def output(self, u: float) -> float:
        """Output at the current time for input sample ``u`` (feedthrough included)."""
        return float(self.c @ self.state) + self.d_ff * u

    def advance(self, u: float, h: float) -> None:
        """Advance the internal state one step with ``u`` held constant."""
        if h != self._h:
            self._prepare(h)
        self.state = self._step_mat @ self.state + self._step_vec * u

    def amend_last_input(self, du: float, h: float) -> None:
        """Retroactively shift the input held over the step just taken by ``du``.

        The discrete step is linear in the held input, so the correction is
        exact as long as no further step has been taken since.
        """
        if h != self._h:
            self._prepare(h)
        self.state = self.state + self._step_vec * du

    def _prepare(self, h: float) -> None:
        if not h > 0.0:
            raise ValueError(f"step size must be positive, got {h}")
        k = self.order
        eye = np.eye(k)
        ha = h * self.a
        ha2 = ha @ ha
        ha3 = ha2 @ ha
        # RK4 applied to x' = a x + b u with u held: x+ = F x + G u
        self._step_mat = eye + ha + ha2 / 2.0 + ha3 / 6.0 + (ha3 @ ha) / 24.0
        self._step_vec = h * ((eye + ha / 2.0 + ha2 / 6.0 + ha3 / 24.0) @ self.b)
        self._h = h


def make_cascade_filter(lam: float, r: int) -> FilterBlock:
    """Build ``lam^3 p^r / (p + lam)^3`` for r in 0..3, zero initial state.

    The r = 3 case matches numerator and denominator degree, so the quotient
    lam^3 appears as direct feedthrough and the output row picks up the
    division remainder.
    """
    if not lam > 0.0:
        raise InvalidFilterError(f"filter pole must be positive, got {lam}")
    if r not in (0, 1, 2, 3):
        raise InvalidFilterError(f"numerator power must be in 0..3, got {r}")
    l2 = lam * lam
    l3 = l2 * lam
    a = np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-l3, -3.0 * l2, -3.0 * lam],
        ]
    )
    b = np.array([0.0, 0.0, 1.0])
    if r < 3:
        c = np.zeros(3)
        c[r] = l3
        d_ff = 0.0
    else:
        # lam^3 p^3/(p+lam)^3 = lam^3 - lam^3 (3 lam p^2 + 3 lam^2 p + lam^3)/(p+lam)^3
        c = np.array([-l3 * l3, -3.0 * l3 * l2, -3.0 * l3 * lam])
        d_ff = l3
    return FilterBlock(a, b, c, d_ff, lam, r)


def make_first_order_filter(lam: float, differentiating: bool = False) -> FilterBlock:
    """Build ``lam/(p+lam)``, or ``lam p/(p+lam) = lam - lam^2/(p+lam)`` when differentiating."""
    if not lam > 0.0:
        raise InvalidFilterError(f"filter pole must be positive, got {lam}")
    a = np.array([[-lam]])
    b = np.array([1.0])
    if differentiating:
        return FilterBlock(a, b, np.array([-lam * lam]), lam, lam, 1)
    return FilterBlock(a, b, np.array([lam]), 0.0, lam, 0)


def filter_step(block: FilterBlock, u: float, t: float, h: float) -> float:
    """Emit the block output for the sample at time ``t`` and advance one step.

    The returned value is the causal output at ``t`` (state driven by all
    earlier samples plus feedthrough of ``u``); the state then moves to
    ``t + h`` with ``u`` held over the step.
    """
    if not math.isfinite(u):
        raise IntegrationFault(f"non-finite filter input at t={t:.6g}", sim_time=t)
    y = block.output(u)
    block.advance(u, h)
    return y


class SmoothedFilter:
    """Filter block stepped with trapezoid-averaged inputs.

    Each step retro-corrects the interval just integrated from the held
    previous sample to the average of its endpoint samples, cutting the
    sampling bias of oscillatory inputs from first to second order in the
    step size.  Output semantics match :func:`filter_step`.
    """

    __slots__ = ("block", "_u_prev")

    def __init__(self, block: FilterBlock):
        self.block = block
        self._u_prev: float | None = None

    def step(self, u: float, t: float, h: float) -> float:
        if not math.isfinite(u):
            raise IntegrationFault(f"non-finite filter input at t={t:.6g}", sim_time=t)
        if self._u_prev is not None:
            self.block.amend_last_input(0.5 * (u - self._u_prev), h)
        y = self.block.output(u)
        self.block.advance(u, h)
        self._u_prev = u
        return y
