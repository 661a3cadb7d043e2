"""Bayesian frequency metrology for optical atomic clocks.

Collective-spin Ramsey protocols, their Bayesian single-cycle errors and
bounds, variational protocol optimization, and closed-loop clock simulation.
"""

from .errors import (
    CalibrationError,
    ClockforgeError,
    ConfigurationError,
    DegenerateSignalError,
    DomainError,
    InsufficientDataError,
    InvalidArgumentError,
    NoSolutionError,
    NumericalConsistencyError,
    QuadratureResolutionError,
    ScanRangeError,
    UnsupportedError,
)
from .prior import PriorModel, gaussian_prior, prior_for
from .protocols import ConditionalModel, ProtocolSpec, statistical_model
from .spin import DickeBasis, StateVector

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ClockforgeError",
    "ConditionalModel",
    "ConfigurationError",
    "DegenerateSignalError",
    "DickeBasis",
    "DomainError",
    "InsufficientDataError",
    "InvalidArgumentError",
    "NoSolutionError",
    "NumericalConsistencyError",
    "PriorModel",
    "ProtocolSpec",
    "QuadratureResolutionError",
    "ScanRangeError",
    "StateVector",
    "UnsupportedError",
    "gaussian_prior",
    "prior_for",
    "statistical_model",
]
