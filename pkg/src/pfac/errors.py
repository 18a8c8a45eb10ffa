class ConfigurationError(ValueError):
    """Invalid configuration values or an unsatisfiable setup."""


class UsageError(ValueError):
    """An operation was called with inconsistent arguments."""


class TrainingDiverged(RuntimeError):
    """A network parameter became non-finite during training."""
