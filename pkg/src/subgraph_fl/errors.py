"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class ConfigError(ValueError):
    """A run configuration document failed validation."""
