"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every failure a user can
trigger should surface as one of them.
"""


class LinetError(Exception):
    """Base class for all package errors."""


class ConfigError(LinetError, ValueError):
    """Invalid configuration or arguments."""


class ShapeError(ConfigError):
    """Tensor extents do not fit the operation."""


class DataError(LinetError, ValueError):
    """Malformed or insufficient input data."""


class NumericalError(LinetError, ArithmeticError):
    """NaN or infinity where finite values are required."""
