"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than a bare ValueError.
"""


class TsadkitError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TsadkitError):
    """Invalid configuration: unknown key, bad type, inconsistent values."""


class DataError(TsadkitError):
    """Malformed or degenerate input data."""


class NumericError(TsadkitError):
    """Numeric failure: non-finite values, degenerate denominators."""
