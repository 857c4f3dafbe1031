"""Exception hierarchy shared by all tailaug modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class TailaugError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TailaugError):
    """Invalid or inconsistent configuration (caught before any work starts)."""


class DataError(TailaugError):
    """Unreadable, malformed, or mismatched input data or artifacts."""


class NumericError(TailaugError):
    """Numerical failure: factorization breakdown, non-finite values, divergence."""
