"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad shapes, bad config values, missing fields."""


class NumericalError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class UsageError(RuntimeError):
    """API used out of order (e.g. backward without a forward pass)."""


class TrainingError(RuntimeError):
    """Training diverged. ``step`` is the epoch or episode index where it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (at step {step})")
        self.step = step


class InsufficientDataError(ValueError):
    """Not enough distinct observations for a statistic."""
