"""Exception types shared across the package."""


class PNNError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PNNError, ValueError):
    """Input data violates a precondition (non-finite samples, bad labels, ...)."""


class ShapeError(PNNError, ValueError):
    """Array widths or lengths do not line up."""


class ConfigError(PNNError, ValueError):
    """A configuration value is out of range or unknown."""


class FormatError(PNNError, ValueError):
    """A binary or text container could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(PNNError, ArithmeticError):
    """A non-finite value appeared during optimisation."""
