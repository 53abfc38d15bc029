"""Exception hierarchy shared by every module."""


class SNGPError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(SNGPError):
    """Raised when a numerical routine cannot produce a finite answer."""


class NotPositiveDefinite(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class DivergenceDetected(NumericalError):
    pass


class ZeroMatrix(NumericalError):
    pass


class DegenerateFeature(NumericalError):
    pass


class ShapeMismatch(SNGPError, ValueError):
    pass


class InvalidRange(SNGPError, ValueError):
    pass


class NotOnSimplex(SNGPError, ValueError):
    pass


class EmptySet(SNGPError, ValueError):
    pass


class EmptyEnsemble(SNGPError, ValueError):
    pass


class DimensionUnsupported(SNGPError, ValueError):
    pass


class AlreadyFinalized(SNGPError, RuntimeError):
    pass


class NotFinalized(SNGPError, RuntimeError):
    pass


class ConfigError(SNGPError):
    pass


class ArtifactVersionMismatch(SNGPError):
    pass
