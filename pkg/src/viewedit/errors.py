"""Shared exception types. CLI exit codes map onto these."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; message names both."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class NumericError(RuntimeError):
    """Non-finite values or diverging optimization (CLI exit code 3)."""
