"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class LowdoseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LowdoseError):
    """Invalid configuration, flags, or operation preconditions."""


class DataError(LowdoseError):
    """Broken or inconsistent input data (files, volumes, masks)."""


class NumericError(LowdoseError):
    """Numeric failure during computation (non-finite loss, gradients)."""
