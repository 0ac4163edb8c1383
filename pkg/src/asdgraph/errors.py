"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, everything else
derived from AsdGraphError -> 2, verification failures -> 3.
"""


class AsdGraphError(Exception):
    """Base class for all package errors."""


class ConfigError(AsdGraphError):
    """Invalid configuration value or combination."""


class ShapeError(AsdGraphError):
    """Operands with incompatible shapes."""


class DataError(AsdGraphError):
    """Non-finite or otherwise malformed numeric data."""


class LabelError(AsdGraphError):
    """Class label outside the valid range."""


class LengthError(AsdGraphError):
    """Signal or sequence shorter than an operation requires."""


class EndpointRangeError(AsdGraphError):
    """Endpoint plan exceeds the bounds of the target scene."""


class SamplingError(AsdGraphError):
    """No tracklet available to fill a required sampling slot."""


class NumericError(AsdGraphError):
    """NaN gradients, divergence, or other numeric breakdown."""


class CheckpointError(AsdGraphError):
    """Unreadable or structurally invalid checkpoint file."""
