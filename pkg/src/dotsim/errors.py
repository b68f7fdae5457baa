"""Exception types shared across the package."""


class DotsimError(Exception):
    """Base class for all package errors."""


class DomainError(DotsimError, ValueError):
    """Input outside the validity region of a model (e.g. bias outside the (1,1) cell)."""


class ConvergenceError(DotsimError, RuntimeError):
    """An iterative numerical method failed to reach its tolerance."""


class QuadratureError(ConvergenceError):
    """Numerical integration did not reach the requested accuracy."""


class FitError(ConvergenceError):
    """A least-squares fit could not produce a meaningful result."""


class CalibrationError(DotsimError, RuntimeError):
    """Charge-cell detection or axis calibration failed."""
