"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4.
"""


class PcgError(Exception):
    """Base class for all package errors."""


class ConfigError(PcgError):
    """Invalid run configuration, config file, or parameter combination."""


class DataError(PcgError):
    """Unreadable, malformed, or inconsistent input data."""


class FormatError(DataError):
    """File bytes do not match the expected layout (bad header, truncation, checksum)."""


class UnsupportedFormatError(DataError):
    """File is well-formed but uses an encoding this package does not handle."""


class ValidationError(DataError):
    """A value violates a documented invariant."""


class NumericError(PcgError):
    """Numerical failure: divergence, non-finite values, or instability."""
