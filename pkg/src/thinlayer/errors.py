"""Exception types shared across the package."""


class ThinLayerError(Exception):
    """Base class for all package errors."""


class GeometryError(ThinLayerError):
    """Invalid or degenerate geometry input."""


class EmbeddingError(ThinLayerError):
    """Layer half-width incompatible with the geometry."""


class FieldError(ThinLayerError):
    """Vector potential or scalar potential cannot be evaluated."""


class AssemblyError(ThinLayerError):
    """Operator assembly failed an internal consistency check."""


class SolverError(ThinLayerError):
    """Eigenvalue or linear solve failed; carries partial results when available."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class FitError(ThinLayerError):
    """Rate fit refused (too few usable points)."""


class ConfigError(ThinLayerError):
    """Run configuration is malformed or violates the schema."""
