"""Exception types raised by the simulators, optimizers and CLI."""


class BJJError(Exception):
    """Base class for all package errors."""


class IntegratorError(BJJError):
    """Norm drift or non-finite values during time stepping."""


class SingularityError(BJJError):
    """Angle integration came too close to a pole of the Bloch sphere."""


class BoxTooSmallError(BJJError):
    """Wavefunction amplitude reached the edge of the spatial grid."""


class ConvergenceError(BJJError):
    """An iterative solver did not converge."""

    def __init__(self, message, last_delta=None):
        super().__init__(message)
        self.last_delta = last_delta


class CalibrationError(BJJError):
    """Effective-parameter extraction failed its fit-quality check."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(BJJError):
    """Invalid or unreadable run configuration."""
