"""Exception hierarchy shared by the solver modules."""


class NSTrackError(Exception):
    """Base class for all package errors."""


class InputError(NSTrackError, ValueError):
    """Invalid argument or precondition violation."""


class OutOfDomainError(NSTrackError, ValueError):
    """A query point lies outside the closed domain."""


class SolverError(NSTrackError, RuntimeError):
    """A linear solve failed or missed its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonlinearSolveError(NSTrackError, RuntimeError):
    """Newton iteration did not converge, even after continuation."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OptError(NSTrackError, RuntimeError):
    """The optimization loop failed (stagnated line search or inner solve failure)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DiagnosticError(NSTrackError, RuntimeError):
    """The inf-sup eigenvalue computation failed."""


class ConfigError(NSTrackError, ValueError):
    """Malformed experiment configuration."""
