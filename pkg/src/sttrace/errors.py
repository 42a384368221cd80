"""Shared exception types."""


class SingularGeometryError(RuntimeError):
    """Level-set gradient vanished where a normal or wind was required."""


class EmptyCutError(RuntimeError):
    """No element of the slab mesh is intersected by the surface."""


class SolverError(RuntimeError):
    """Linear solve failed; carries the residual history when iterative."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""
