"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class MtutError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MtutError):
    """Bad configuration: unknown keys, invalid values, inconsistent flags."""


class DataError(MtutError):
    """Bad data: failed validation, missing files, malformed corpus entries."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class NumericError(MtutError):
    """Non-finite value encountered where the training contract forbids it."""
