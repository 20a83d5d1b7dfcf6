"""Shared exception types."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or out of range."""


class ScenarioFormatError(ValueError):
    """A scenario file could not be parsed."""


class ScenarioValidationError(ValueError):
    """A scenario violates a structural invariant (message names the field)."""
