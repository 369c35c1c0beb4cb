"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class FormatError(ValueError):
    """An input file does not conform to the expected format."""


class ConfigurationError(ValueError):
    """A run is configured inconsistently (e.g. a class without exemplars)."""
