"""Exception taxonomy shared by all ttada modules."""


class TtadaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TtadaError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(TtadaError):
    """An operation received or produced numerically invalid values."""


class ValidationError(TtadaError):
    """Inputs, configuration, or call contracts are invalid."""


class FormatError(TtadaError):
    """A file (WAV, weight file) violates its expected format."""
