"""Shared-codebook emergent communication simulator."""

from aimlab.errors import ConfigError, InsufficientDataError, NumericalError, TrainingError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InsufficientDataError", "NumericalError", "TrainingError", "UsageError"]
