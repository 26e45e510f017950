"""Error types shared across the package.

Each class maps to a CLI exit code so scripted callers can tell config
mistakes apart from missing data and numerical blow-ups.
"""


class FlashcardsError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(FlashcardsError):
    """Invalid configuration (bad field, bad value, schema violation)."""

    exit_code = 2


class DataError(FlashcardsError):
    """Dataset problems: unknown id, missing files, bad shapes."""

    exit_code = 3


class NumericError(FlashcardsError):
    """Numerical failure during training or evaluation (NaN loss etc.)."""

    exit_code = 4
