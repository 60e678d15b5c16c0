"""Simulation and estimation toolkit for adaptive observation under delayed measurements.

The package simulates systems whose state matrix carries unknown sinusoidal
time-varying parameters and whose output arrives with a known constant
delay, and reconstructs frequencies, coefficients, and finally the full
state in three stages.
"""

from .ampstage import AmpChannel, AmpStage, compute_chi, eta_hat, reconstruct_theta
from .config import config_from_dict, config_hash, parse_config
from .errors import (
    AssumptionViolation,
    ConfigError,
    DegeneracyError,
    EstimatorFault,
    IntegrationFault,
    InvalidFilterError,
    OutOfHistoryError,
    SimulationError,
)
from .estimators import (
    DremState,
    GradientState,
    adjugate,
    det_small,
    drem_mix,
    drem_step,
    gradient_step,
)
from .filters import FilterBlock, filter_step, make_cascade_filter, make_first_order_filter
from .freqstage import FreqChannel, compute_beta, compute_psi, estimate_omega
from .gpebo import GpeboObserver
from .pipeline import (
    ExperimentConfig,
    FilterPoles,
    GainConfig,
    GridConfig,
    SimulationTrace,
    StageSchedule,
    SummaryConfig,
    default_experiment,
    run_simulation,
    trace_columns,
)
from .plant import (
    PlantConfig,
    PlantPreset,
    build_preset,
    measure,
    paper_plant,
    plant_derivative,
    theta_true,
    validate_assumptions,
)
from .report import RunSummary, compare_runs, run_and_report, summarize
from .simcore import HistoryBuffer, TimeGrid, history_at, rk4_step

__version__ = "0.1.0"

__all__ = [
    "AmpChannel",
    "AmpStage",
    "AssumptionViolation",
    "ConfigError",
    "DegeneracyError",
    "DremState",
    "EstimatorFault",
    "ExperimentConfig",
    "FilterBlock",
    "FilterPoles",
    "FreqChannel",
    "GainConfig",
    "GpeboObserver",
    "GradientState",
    "GridConfig",
    "HistoryBuffer",
    "IntegrationFault",
    "InvalidFilterError",
    "OutOfHistoryError",
    "PlantConfig",
    "PlantPreset",
    "RunSummary",
    "SimulationError",
    "SimulationTrace",
    "StageSchedule",
    "SummaryConfig",
    "TimeGrid",
    "adjugate",
    "build_preset",
    "compare_runs",
    "compute_beta",
    "compute_chi",
    "compute_psi",
    "config_from_dict",
    "config_hash",
    "default_experiment",
    "det_small",
    "drem_mix",
    "drem_step",
    "estimate_omega",
    "eta_hat",
    "filter_step",
    "gradient_step",
    "history_at",
    "make_cascade_filter",
    "make_first_order_filter",
    "measure",
    "paper_plant",
    "parse_config",
    "plant_derivative",
    "reconstruct_theta",
    "run_and_report",
    "run_simulation",
    "summarize",
    "theta_true",
    "trace_columns",
    "validate_assumptions",
]
