"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.py): ConfigError -> 3,
DataError -> 4, NumericError -> 5.
"""


class JepaplanError(Exception):
    """Base class for all package errors."""


class ConfigError(JepaplanError):
    """Invalid configuration value or config file schema violation."""


class DataError(JepaplanError):
    """Missing, corrupt, or incompatible dataset / checkpoint files."""


class NumericError(JepaplanError):
    """Numeric failure: NaN/Inf encountered where finite values are required."""
