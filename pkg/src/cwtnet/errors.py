"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage/configuration/shape problems exit 2,
data problems exit 3, numeric failures exit 4.
"""


class CwtNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CwtNetError):
    """Array dimensions do not satisfy an operation's contract."""


class ConfigurationError(CwtNetError):
    """A configuration value is invalid or inconsistent."""


class UsageError(CwtNetError):
    """An API or CLI entry point was called incorrectly."""


class DataError(CwtNetError):
    """A dataset or file on disk is missing, malformed, or inconsistent."""


class CheckpointError(DataError):
    """A checkpoint file cannot be read or fails its integrity check."""


class NumericError(CwtNetError):
    """A numeric failure: non-finite loss, failed gradient verification."""
