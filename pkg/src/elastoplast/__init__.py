"""Simulation and verification tools for randomly forced elasto-plastic oscillators."""

from .dynamics import (
    MONITOR,
    DriftModel,
    SolverConfig,
    State,
    Trajectory,
    clamp_step,
    integrate,
    lyapunov_value,
    validate_drift,
    verify_dwell,
)
from .exceptions import BlowUpError, ConfigError, ElastoplastError, InfeasibleError, PreconditionError

__version__ = "0.1.0"

__all__ = [
    "MONITOR",
    "BlowUpError",
    "ConfigError",
    "DriftModel",
    "ElastoplastError",
    "InfeasibleError",
    "PreconditionError",
    "SolverConfig",
    "State",
    "Trajectory",
    "clamp_step",
    "integrate",
    "lyapunov_value",
    "validate_drift",
    "verify_dwell",
]
