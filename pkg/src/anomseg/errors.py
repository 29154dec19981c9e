"""Exception hierarchy shared across the package."""


class AnomsegError(Exception):
    """Base class for all package errors."""


class ConfigError(AnomsegError, ValueError):
    """Invalid configuration value; the message names the offending field."""


class GenerationError(AnomsegError, RuntimeError):
    """Synthetic sample generation failed after bounded retries."""


class DatasetError(AnomsegError, OSError):
    """Missing, corrupt or invalid on-disk dataset content."""


class EmptyDatasetError(DatasetError):
    pass


class UndefinedMetricError(AnomsegError, ValueError):
    """Metric is undefined for the given labels (e.g. no positive pixels)."""


class CheckpointError(AnomsegError, OSError):
    pass


class TrainingError(AnomsegError, RuntimeError):
    """Training aborted, e.g. because a loss component became NaN."""
