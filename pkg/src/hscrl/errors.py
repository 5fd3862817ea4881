"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters, ranges, dimensions or identifiers."""


class StateError(RuntimeError):
    """Operation not allowed in the current environment state."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during an optimization step."""


class InsufficientDataError(ValueError):
    """Not enough samples to compute a summary."""
