"""Exception hierarchy shared by all modules."""


class BulkSurfaceError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BulkSurfaceError):
    """Invalid configuration (unknown shape, bad key, violated solvability condition)."""


class AssemblyError(BulkSurfaceError):
    """Raised when a finite element operator cannot be assembled."""


class ModelError(BulkSurfaceError):
    """A potential or mobility violates its structural assumptions."""


class DomainError(BulkSurfaceError):
    """An argument lies outside the domain of an operation."""


class SolverError(BulkSurfaceError):
    """A linear solve failed or produced non-finite values."""


class StepError(SolverError):
    """Newton iteration did not converge within the iteration budget."""

    def __init__(self, message, residual_history=(), step_index=None):
        super().__init__(message)
        self.residual_history = list(residual_history)
        self.step_index = step_index
