"""Staged experiment driver: truth simulation, three estimation stages, trace assembly.

One fixed-step loop advances the plant, the frequency stage, the
coefficient stage, and the finite-time observer on a shared grid.  Stage
activation follows the configured schedule (optionally data-driven);
every sampled signal lands in one wide trace whose column set depends only
on the plant dimensions, so downstream tooling can rely on the schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ampstage import AmpStage
from .errors import ConfigError, OutOfHistoryError, SimulationError
from .freqstage import DEFAULT_BETA_GATE, DEFAULT_EPS_PSI, DEFAULT_EVENT_HOLD, FreqChannel
from .gpebo import GpeboObserver
from .plant import PlantConfig, paper_plant, plant_derivative, theta_true
from .simcore import HistoryBuffer, rk4_step

__all__ = [
    "GainConfig",
    "FilterPoles",
    "StageSchedule",
    "GridConfig",
    "SummaryConfig",
    "ExperimentConfig",
    "SimulationTrace",
    "default_experiment",
    "trace_columns",
    "run_simulation",
]


@dataclass
class GainConfig:
    gamma1: list[float] = field(default_factory=lambda: [1000.0, 10000.0])
    gamma2: float = 100.0
    gamma3: float = 100.0


@dataclass
class FilterPoles:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0


@dataclass
class StageSchedule:
    """Activation times of the three stages.

    ``freq_start`` defaults to the measurement delay.  With ``auto_switch``
    the configured times act as deadlines and the per-stage convergence
    detectors may move a switch earlier.  ``inject_true_theta`` bypasses
    stages 1 and 2 and drives the observer with the true parameter signals
    (matched-observer mode, useful for exactness checks).
    """

    freq_start: float | None = None
    amp_start: float = 20.0
    gpebo_start: float = 40.0
    auto_switch: bool = False
    inject_true_theta: bool = False
    e_hat0: list[float] | None = None


@dataclass
class GridConfig:
    t0: float = 0.0
    h: float = 1e-3
    horizon: float = 60.0


@dataclass
class SummaryConfig:
    """Evaluation-window and settle-threshold choices used by run summaries."""

    final_window_frac: float = 0.2
    omega_settle_frac: float = 0.02
    theta_settle_frac: float = 0.05
    x_settle_abs: float = 0.01


@dataclass
class ExperimentConfig:
    plant: PlantConfig
    gains: GainConfig = field(default_factory=GainConfig)
    poles: FilterPoles = field(default_factory=FilterPoles)
    grid: GridConfig = field(default_factory=GridConfig)
    stages: StageSchedule = field(default_factory=StageSchedule)
    mu: float = 0.01
    eps_psi: float = DEFAULT_EPS_PSI
    beta_gate: float | None = DEFAULT_BETA_GATE
    event_hold: float = DEFAULT_EVENT_HOLD
    decimate: int = 10
    summary: SummaryConfig = field(default_factory=SummaryConfig)
    resolved: dict | None = None

    def validate(self) -> "ExperimentConfig":
        p = self.plant
        if len(self.gains.gamma1) != p.m:
            raise ConfigError(
                f"gains.gamma1 must list one gain per channel ({p.m}), got {len(self.gains.gamma1)}"
            )
        for name, val in (("gamma2", self.gains.gamma2), ("gamma3", self.gains.gamma3),
                          *((f"gamma1[{j + 1}]", g) for j, g in enumerate(self.gains.gamma1))):
            if not val > 0.0:
                raise ConfigError(f"gains.{name} must be positive, got {val}")
        for name, val in (("lambda1", self.poles.lambda1), ("lambda2", self.poles.lambda2),
                          ("lambda3", self.poles.lambda3)):
            if not val > 0.0:
                raise ConfigError(f"filters.{name} must be positive, got {val}")
        if not 0.0 < self.mu < 1.0:
            raise ConfigError(f"mu must lie in (0, 1), got {self.mu}")
        if not self.grid.h > 0.0:
            raise ConfigError(f"grid.h must be positive, got {self.grid.h}")
        if self.grid.horizon < 0.0:
            raise ConfigError(f"grid.horizon must be non-negative, got {self.grid.horizon}")
        if self.decimate < 1 or int(self.decimate) != self.decimate:
            raise ConfigError(f"output.decimate must be a positive integer, got {self.decimate}")
        delay_steps = delay_step_count(p.d, self.grid.h)
        if delay_steps < 1:
            raise ConfigError(f"delay {p.d} must be at least one step {self.grid.h}")
        if not self.stages.inject_true_theta and self.stages.gpebo_start < self.stages.amp_start:
            raise ConfigError(
                "stages.gpebo_start must not precede stages.amp_start "
                "(the observer consumes the coefficient estimates)"
            )
        if self.stages.e_hat0 is not None and len(self.stages.e_hat0) != p.n:
            raise ConfigError(f"stages.e_hat0 must have {p.n} entries")
        if not 0.0 < self.summary.final_window_frac <= 1.0:
            raise ConfigError("summary.final_window_frac must lie in (0, 1]")
        if self.eps_psi <= 0.0:
            raise ConfigError(f"eps_psi must be positive, got {self.eps_psi}")
        if self.event_hold < 0.0:
            raise ConfigError(f"event_hold must be non-negative, got {self.event_hold}")
        return self


def default_experiment() -> ExperimentConfig:
    """The built-in benchmark experiment with its published gains and poles."""
    return ExperimentConfig(plant=paper_plant()).validate()


def delay_step_count(d: float, h: float) -> int:
    """Number of grid steps in the delay; the delay must be a step multiple."""
    steps = int(round(d / h))
    if abs(steps * h - d) > 1e-9 * max(1.0, abs(d)):
        raise ConfigError(f"delay {d} is not an integer multiple of the step size {h}")
    return steps


def trace_columns(n: int, m: int) -> list[str]:
    """Column schema of the simulation trace; a function of (n, m) only."""
    cols = ["t", "u"]
    cols += [f"x_{i + 1}" for i in range(n)]
    cols += [f"theta_{j + 1}" for j in range(m)]
    cols += [f"y_{i + 1}" for i in range(n)]
    for j in range(1, m + 1):
        cols += [
            f"freq_psi_{j}", f"freq_xi_{j}", f"freq_beta_{j}", f"freq_q_{j}",
            f"freq_phi_{j}", f"freq_vhat_{j}", f"freq_omegahat_{j}", f"freq_omegaerr_{j}",
        ]
    for i in range(1, m + 1):
        cols += [
            f"amp_chi1_{i}", f"amp_chi2_{i}", f"amp_ycal_{i}", f"amp_phi1_{i}",
            f"amp_phi2_{i}", f"amp_delta_{i}", f"amp_z1_{i}", f"amp_z2_{i}",
            f"amp_ahat1_{i}", f"amp_ahat2_{i}", f"amp_aerr1_{i}", f"amp_aerr2_{i}",
            f"amp_thetahat_{i}", f"amp_thetaerr_{i}",
        ]
    cols += [f"obs_z_{i + 1}" for i in range(n)]
    cols += [f"obs_phia_{r + 1}{c + 1}" for r in range(n) for c in range(n)]
    cols += [f"obs_g_{i + 1}" for i in range(n)]
    cols += [f"obs_r_{i + 1}" for i in range(n)]
    cols += ["obs_p", "obs_w", "obs_wc"]
    cols += [f"obs_ehat_{i + 1}" for i in range(n)]
    cols += [f"obs_eft_{i + 1}" for i in range(n)]
    cols += [f"obs_xhat_{i + 1}" for i in range(n)]
    cols += [f"obs_xerr_{i + 1}" for i in range(n)]
    cols += ["obs_xerr_inf"]
    return cols


@dataclass
class SimulationTrace:
    """Grid-sampled record of truth, estimates, and error signals."""

    columns: list[str]
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no trace column named '{name}'") from None

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def to_csv(self, path, decimate: int = 1) -> None:
        """Write the (decimated) trace; floats formatted to round-trip exactly."""
        if decimate < 1 or int(decimate) != decimate:
            raise ConfigError(f"decimate must be a positive integer, got {decimate}")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.data[:: int(decimate)]:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _step_index(t_target: float, t0: float, h: float) -> int:
    return max(0, math.ceil((t_target - t0) / h - 1e-9))


def run_simulation(cfg: ExperimentConfig) -> SimulationTrace:
    """Run the full staged experiment and return the sampled trace.

    Deterministic: identical configurations produce bit-identical traces.
    """
    cfg.validate()
    p = cfg.plant
    n, m = p.n, p.m
    t0, h = cfg.grid.t0, cfg.grid.h
    cols = trace_columns(n, m)
    n_steps = int(math.floor(cfg.grid.horizon / h + 1e-9))
    meta = {
        "preset": p.preset.name, "n": n, "m": m, "h": h, "t0": t0,
        "horizon": cfg.grid.horizon, "t_c": None, "cond_warning": False,
        "freq_start": None, "amp_start": None, "gpebo_start": None,
        "omega_hat_final": None,
    }
    if n_steps < 1:
        return SimulationTrace(cols, np.empty((0, len(cols))), meta)

    delay_steps = delay_step_count(p.d, h)
    inject = cfg.stages.inject_true_theta
    freq_start = p.d if cfg.stages.freq_start is None else cfg.stages.freq_start
    k_freq = _step_index(freq_start, t0, h)
    k_amp = None if inject else _step_index(cfg.stages.amp_start, t0, h)
    k_obs = _step_index(cfg.stages.gpebo_start, t0, h)
    auto = cfg.stages.auto_switch and not inject

    # column base offsets
    i_x = 2
    i_theta = i_x + n
    i_y = i_theta + m
    i_freq = i_y + n
    i_amp = i_freq + 8 * m
    i_obs = i_amp + 14 * m

    xh = HistoryBuffer(t0, h, n, n_steps + 1)
    x = p.x0.copy()
    uses_y = p.preset.uses_y
    u_sig = p.preset.u_sig
    a_map, b_map = p.preset.a_map, p.preset.b_map

    def y_at(tt: float) -> np.ndarray:
        # measurement at an arbitrary time; constant prehistory before t0
        tau = tt - p.d
        if tau <= t0:
            return p.x0
        return xh.at(tau)

    def truth_deriv(tt, xv):
        return plant_derivative(p, xv, tt, y=y_at(tt) if uses_y else None)

    freq_channels = None
    if not inject:
        freq_channels = [
            FreqChannel(
                j, p.q_mats[j], cfg.gains.gamma1[j], cfg.poles.lambda1,
                k_scale=p.k_scales[j], active_row=p.active_rows[j][0],
                eps_psi=cfg.eps_psi, beta_gate=cfg.beta_gate, event_hold=cfg.event_hold,
            )
            for j in range(m)
        ]
    amp_stage: AmpStage | None = None
    observer: GpeboObserver | None = None
    theta_hat_of = None   # callable (i, t) -> float used by the observer

    def make_observer_rhs():
        q_mats = p.q_mats

        def a_cl_of(tt: float) -> np.ndarray:
            u = u_sig(tt)
            a = np.array(a_map(y_at(tt) if uses_y else None, u, tt), dtype=float, copy=True)
            for i in range(m):
                a += theta_hat_of(i, tt) * q_mats[i]
            return a

        def bu_of(tt: float) -> np.ndarray:
            u = u_sig(tt)
            return b_map(y_at(tt) if uses_y else None, u, tt) * u

        return a_cl_of, bu_of

    data = np.full((n_steps + 1, len(cols)), np.nan)
    obs_rhs = None

    for k in range(n_steps + 1):
        t = t0 + k * h
        xh.append(x)
        row = data[k]
        row[0] = t
        row[1] = u_sig(t)
        row[i_x : i_x + n] = x
        for i in range(m):
            row[i_theta + i] = theta_true(p, i, t)

        y = None
        if k >= delay_steps:
            y = xh.value_at_index(k - delay_steps)
            row[i_y : i_y + n] = y

        # stage activations
        if not inject and k == k_amp and amp_stage is None:
            omega_hats = [ch.omega_hat for ch in freq_channels]
            meta["omega_hat_final"] = omega_hats
            meta["amp_start"] = t
            amp_stage = AmpStage(p, omega_hats, cfg.gains.gamma2,
                                 cfg.poles.lambda2, cfg.poles.lambda3, p.d)
            channels = amp_stage.channels

            def theta_hat_of(i, tt, _channels=channels):
                ch = _channels[i]
                a = ch.grads
                return a[0].v_hat * math.sin(ch.omega_hat * tt) + a[1].v_hat * math.cos(ch.omega_hat * tt)

        if k == k_obs and observer is None and (inject or amp_stage is not None):
            if inject:
                def theta_hat_of(i, tt):
                    return theta_true(p, i, tt)
            observer = GpeboObserver(n, cfg.gains.gamma3, cfg.mu, cfg.stages.e_hat0)
            observer.activate(t, h, n_steps + 1 - k)
            meta["gpebo_start"] = t
            k_obs = k  # pin in case of auto switching
            obs_rhs = make_observer_rhs()

        freq_active = (not inject) and k >= k_freq and (k_amp is None or k < k_amp)
        if freq_active:
            if y is None:
                raise OutOfHistoryError(
                    f"no measurement before t = d = {p.d:.6g}"
                ).annotate("frequency stage", t)
            if meta["freq_start"] is None:
                meta["freq_start"] = t
            try:
                f_d = _delayed_drift(p, xh, y, t, t0)
                for j, ch in enumerate(freq_channels):
                    sig = ch.step(y, f_d, t, h)
                    base = i_freq + 8 * j
                    row[base] = sig.psi
                    row[base + 1] = sig.xi
                    row[base + 2] = sig.beta
                    row[base + 3] = sig.q
                    row[base + 4] = sig.phi
                    row[base + 5] = sig.v_hat
                    row[base + 6] = sig.omega_hat
                    row[base + 7] = p.omega[j] - sig.omega_hat
                if auto and k + 1 < k_amp and all(ch.converged(t) for ch in freq_channels):
                    k_amp = k + 1
            except SimulationError as err:
                raise err.annotate("frequency stage", t)

        if amp_stage is not None:
            if y is None:
                raise OutOfHistoryError(
                    f"no measurement before t = d = {p.d:.6g}"
                ).annotate("coefficient stage", t)
            try:
                f_d = _delayed_drift(p, xh, y, t, t0)
                records = amp_stage.step(y, f_d, t, h)
                for i, rec in enumerate(records):
                    base = i_amp + 14 * i
                    row[base] = rec["chi"][0]
                    row[base + 1] = rec["chi"][1]
                    row[base + 2] = rec["ycal"]
                    row[base + 3] = rec["phi"][0]
                    row[base + 4] = rec["phi"][1]
                    row[base + 5] = rec["delta"]
                    row[base + 6] = rec["z"][0]
                    row[base + 7] = rec["z"][1]
                    row[base + 8] = rec["a_hat"][0]
                    row[base + 9] = rec["a_hat"][1]
                    row[base + 10] = p.a_coef[i][0] - rec["a_hat"][0]
                    row[base + 11] = p.a_coef[i][1] - rec["a_hat"][1]
                    row[base + 12] = rec["theta_hat"]
                    row[base + 13] = row[i_theta + i] - rec["theta_hat"]
                if auto and observer is None and k + 1 < k_obs and amp_stage.converged(t):
                    k_obs = k + 1
            except SimulationError as err:
                raise err.annotate("coefficient stage", t)

        if observer is not None:
            try:
                observer.record()
                base = i_obs
                row[base : base + n] = observer.z
                row[base + n : base + n + n * n] = observer.phi_a.ravel()
                base_g = base + n + n * n
                p_det = 0.0
                if k - delay_steps >= k_obs:
                    g, r_vec, p_det = observer.build_state_regression(y, t, p.d)
                    row[base_g : base_g + n] = g
                    row[base_g + n : base_g + 2 * n] = r_vec
                row[base_g + 2 * n] = p_det
                row[base_g + 2 * n + 1] = observer.w
                e_ft, w_c = observer.finite_time_combine()
                row[base_g + 2 * n + 2] = w_c
                base_e = base_g + 2 * n + 3
                row[base_e : base_e + n] = observer.e_hat
                row[base_e + n : base_e + 2 * n] = e_ft
                x_hat = observer.state_estimate(e_ft)
                row[base_e + 2 * n : base_e + 3 * n] = x_hat
                x_err = x - x_hat
                row[base_e + 3 * n : base_e + 4 * n] = x_err
                row[base_e + 4 * n] = float(np.abs(x_err).max())
                observer.note_clipping_crossed(t)
                if k - delay_steps >= k_obs:
                    observer.e0_gradient_step(r_vec, p_det, h)
                    observer.advance_forgetting(p_det, h)
                if k < n_steps:
                    observer.advance(obs_rhs[0], obs_rhs[1], t, h)
            except SimulationError as err:
                raise err.annotate("state observer stage", t)

        if k < n_steps:
            try:
                x = rk4_step(x, truth_deriv, t, h)
            except SimulationError as err:
                raise err.annotate("plant", t)

    if meta["omega_hat_final"] is None and freq_channels is not None:
        meta["omega_hat_final"] = [ch.omega_hat for ch in freq_channels]
    if observer is not None:
        meta["t_c"] = observer.t_c
        meta["cond_warning"] = observer.cond_warning
    return SimulationTrace(cols, data, meta)


def _delayed_drift(p: PlantConfig, xh: HistoryBuffer, y: np.ndarray, t: float, t0: float) -> np.ndarray:
    """Drift of the delayed state: maps evaluated at the delayed instant.

    Presets whose maps read the measurement need it at the delayed instant
    as well, which pushes their warm-up one extra delay interval out.
    """
    td = t - p.d
    u_d = p.preset.u_sig(td)
    y_d = None
    if p.preset.uses_y:
        y_d = xh.at(td - p.d)  # raises OutOfHistory before 2d
    return p.preset.a_map(y_d, u_d, td) @ y + p.preset.b_map(y_d, u_d, td) * u_d
