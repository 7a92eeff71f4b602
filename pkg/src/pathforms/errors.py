"""Exception types shared across the package."""


class PathformsError(Exception):
    """Base class for all package errors."""


class GeometryError(PathformsError):
    """A point or vector violates a manifold constraint."""


class StepTooLarge(PathformsError):
    """A projected Brownian increment left the injectivity radius."""


class PathMismatch(PathformsError):
    """Operands were built over different paths or grids."""


class NonSkewRotation(PathformsError):
    """A rotation-field integrand is not skew on the tangent space."""


class UnsupportedPairing(PathformsError):
    """Trace pairing requested for two non-Hilbert-Schmidt operators."""


class ConfigError(PathformsError):
    """A run configuration is malformed or inconsistent."""


class StencilUnderflow(PathformsError):
    """A finite-difference step is too small for the working precision."""


class GridSnapWarning(UserWarning):
    """An evaluation time was moved to the nearest grid node."""
