"""Exception types shared across the package."""


class SedconvError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SedconvError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class GraphError(SedconvError, ValueError):
    """The differentiation graph cannot satisfy the request (non-scalar
    loss, parameter not connected to the loss, ...)."""


class ConfigError(SedconvError, ValueError):
    """A model, data, or experiment configuration is invalid."""


class DataFormatError(SedconvError, ValueError):
    """A feature or checkpoint file is malformed.

    ``offset`` carries the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class NumericsError(SedconvError, ArithmeticError):
    """Training produced a non-finite value (diverged loss, NaN gradient)."""


class NoReferenceError(SedconvError, ValueError):
    """Error rate is undefined because the reference contains no active events."""
