"""Exception types shared across the package."""


class SpectraldsError(Exception):
    """Base class for numerical and format failures."""


class DimensionError(SpectraldsError):
    """Shapes of inputs do not agree."""


class EigensolverError(SpectraldsError):
    """Iterative eigensolver failed to converge; carries residual diagnostics."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class FitDivergenceError(SpectraldsError):
    """Gradient-based fit diverged (loss grew 10x over its best)."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ChecksumError(SpectraldsError):
    """Stored payload bytes do not match the manifest checksum."""


class SchemaError(SpectraldsError):
    """Manifest schema version or artifact kind is not understood."""


class TruncatedPayloadError(SpectraldsError):
    """Payload file is shorter than the manifest-declared shape requires."""
