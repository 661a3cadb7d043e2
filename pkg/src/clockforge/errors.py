"""Exception and warning types shared across the package."""


class ClockforgeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ClockforgeError, ValueError):
    """An argument violates a documented precondition."""


class NumericalConsistencyError(ClockforgeError, ArithmeticError):
    """A computed quantity failed an internal consistency check."""


class QuadratureResolutionError(NumericalConsistencyError):
    """The quadrature grid is too coarse for the requested accuracy."""


class NoSolutionError(ClockforgeError, ArithmeticError):
    """A root finder could not bracket a solution."""


class DegenerateSignalError(NumericalConsistencyError):
    """The measurement signal carries no usable information."""


class DomainError(NumericalConsistencyError):
    """A closed-form expression left its domain of validity."""


class InsufficientDataError(ClockforgeError, ValueError):
    """Too few samples for the requested statistic."""


class ConfigurationError(ClockforgeError, ValueError):
    """Invalid or inconsistent configuration."""


class UnsupportedError(ClockforgeError, NotImplementedError):
    """The requested combination is outside the supported model."""


class CalibrationError(ClockforgeError, RuntimeError):
    """Prior-width calibration could not produce a usable curve."""


class ScanRangeError(ClockforgeError, ValueError):
    """A scan optimum sits on the boundary of the supplied grid."""


class ConditioningWarning(RuntimeWarning):
    """An eigenvalue floor removed a large share of the operator weight."""


class PrecisionWarning(RuntimeWarning):
    """A truncated series or fit may be less accurate than requested."""
