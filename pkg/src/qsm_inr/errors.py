"""Exception hierarchy shared by the library and the CLI."""


class QSMError(Exception):
    """Base class for all library errors."""


class GridMismatch(QSMError):
    pass


class NonHermitianSpectrum(QSMError):
    """Raised when an inverse transform is requested for a non-Hermitian spectrum."""


class InsufficientOrientations(QSMError):
    pass


class DegenerateOrientations(QSMError):
    pass


class MissingForwardCache(QSMError):
    pass


class ShapeOutOfBounds(QSMError):
    pass


class ZeroReference(QSMError):
    pass


class EmptyDataset(QSMError):
    pass


class VolumeFormatError(QSMError):
    """Malformed volume or checkpoint file."""


class ConfigError(QSMError):
    pass


class MissingCheckpoint(QSMError):
    """A command needs a trained model that is not on disk."""
