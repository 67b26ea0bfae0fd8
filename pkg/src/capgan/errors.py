"""Shared exception types."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class ParseError(ValueError):
    """A serialized artifact could not be decoded."""


class ConfigError(ValueError):
    """A configuration value violates a precondition."""
