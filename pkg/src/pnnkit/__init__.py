"""Progressive neural network fault classification from vibration spectra."""

__version__ = "0.1.0"

from pnnkit.errors import (  # noqa: E402
    ConfigError,
    FormatError,
    InvalidInputError,
    NumericError,
    PNNError,
    ShapeError,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "InvalidInputError",
    "NumericError",
    "PNNError",
    "ShapeError",
    "__version__",
]
