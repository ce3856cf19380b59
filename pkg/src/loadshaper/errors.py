"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration and data problems exit
with 2, numerical/runtime failures with 3.
"""


class LoadshaperError(Exception):
    """Base class for all package errors."""


class ConfigError(LoadshaperError):
    """Invalid configuration or invariant violation detected before compute."""


class DataError(LoadshaperError):
    """Malformed or insufficient input data."""


class CheckpointError(LoadshaperError):
    """Unreadable, unversioned, or incompatible checkpoint file."""


class TrainingDiverged(LoadshaperError):
    """Non-finite loss or other numerical failure during training."""
