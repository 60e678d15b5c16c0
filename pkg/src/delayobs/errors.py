"""Exception hierarchy shared by the simulator, with process exit codes."""

from __future__ import annotations

__all__ = [
    "SimulationError",
    "ConfigError",
    "InvalidFilterError",
    "AssumptionViolation",
    "DegeneracyError",
    "IntegrationFault",
    "EstimatorFault",
    "OutOfHistoryError",
]


class SimulationError(Exception):
    """Base class for all faults raised while building or running an experiment.

    Errors raised inside a pipeline stage are annotated with the stage name
    and simulation time so the CLI can report where a run died.
    """

    exit_code = 1

    def __init__(self, message: str, *, stage: str | None = None, sim_time: float | None = None):
        super().__init__(message)
        self.stage = stage
        self.sim_time = sim_time

    def annotate(self, stage: str, sim_time: float) -> "SimulationError":
        """Attach stage/time context once; later calls keep the first annotation."""
        if self.stage is None:
            self.stage = stage
            self.sim_time = sim_time
            self.args = (f"[{stage}, t={sim_time:.6g}] {self.args[0]}",)
        return self


class ConfigError(SimulationError):
    """Invalid configuration file, key, value, or inconsistent experiment setup."""

    exit_code = 2


class InvalidFilterError(ConfigError):
    """Requested filter block outside the supported bank."""


class AssumptionViolation(SimulationError):
    """A structural requirement on the plant (coupling matrices, dimensions) failed."""

    exit_code = 3


class DegeneracyError(SimulationError):
    """A quadratic output lost positivity, so its logarithm is undefined."""

    exit_code = 4


class IntegrationFault(SimulationError):
    """Non-finite value produced or consumed by a numerical integrator."""

    exit_code = 5


class EstimatorFault(IntegrationFault):
    """Non-finite regressor or measurement fed to an estimator update."""


class OutOfHistoryError(SimulationError):
    """Delayed lookup before the recorded range: a consumer started too early."""

    exit_code = 6
