"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A layer or run configuration is invalid (bad geometry, bad ranges)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class StateError(RuntimeError):
    """An operation was called before its required caches were populated."""


class FormatError(ValueError):
    """A data or model file does not match its declared binary format."""
