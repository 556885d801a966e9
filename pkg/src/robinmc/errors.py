"""Exception types raised across the package."""


class RobinMCError(Exception):
    """Base class for all package errors."""


class DomainError(RobinMCError, ValueError):
    """A point lies outside the closure of the domain."""


class NotOnBoundaryError(RobinMCError, ValueError):
    """A boundary-only operation received an interior point."""


class DegenerateProjectionError(RobinMCError, ValueError):
    """The nearest boundary point is not unique (ball or annulus center)."""


class InvalidRadiusError(RobinMCError, ValueError):
    """A collar radius exceeds the admissible bound."""


class OutOfCollarError(RobinMCError, ValueError):
    """A point lies outside the collar where the distance function is smooth."""


class PreconditionError(RobinMCError, ValueError):
    """An input violates a documented precondition (boundary condition, drift type...)."""

    def __init__(self, message: str, defect: float | None = None):
        super().__init__(message)
        self.defect = defect


class SimulationError(RobinMCError, RuntimeError):
    """Path simulation failed; carries the offending path index when known."""

    def __init__(self, message: str, path_index: int | None = None):
        if path_index is not None:
            message = f"path {path_index}: {message}"
        super().__init__(message)
        self.path_index = path_index


class StabilityError(RobinMCError, RuntimeError):
    """The PDE solver detected blow-up."""


class ConfigError(RobinMCError, ValueError):
    """Experiment configuration is not schema-valid."""
