"""Exception types raised across the package."""


class CapaError(Exception):
    """Base class for all package errors."""


class GeometryError(CapaError, ValueError):
    """Invalid aperture, lattice or user geometry."""


class SingularGeometryError(GeometryError):
    """A field point coincides with a source point (zero distance)."""


class QuadratureError(CapaError, ValueError):
    """Invalid grid or non-finite integrand."""


class ResolutionError(CapaError, ValueError):
    """A grid is too coarse for the Fourier modes it must resolve."""


class GridMismatchError(CapaError, ValueError):
    """Functions defined on different grids were combined."""


class OperatorSVDError(CapaError, RuntimeError):
    """The singular value decomposition failed; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularGramError(CapaError, ValueError):
    """User responses are linearly dependent (Gram matrix singular)."""


class ScopeError(CapaError, ValueError):
    """Requested configuration is outside the supported scope."""


class EstimationError(CapaError, RuntimeError):
    """Monte-Carlo estimate unavailable (for example, no outage events)."""


class ConfigError(CapaError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
