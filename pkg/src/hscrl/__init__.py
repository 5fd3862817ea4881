"""Dynamic humanitarian supply chain design with PPO and heuristic baselines."""

from hscrl.errors import ConfigurationError, InsufficientDataError, NumericError, StateError

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InsufficientDataError",
    "NumericError",
    "StateError",
]
