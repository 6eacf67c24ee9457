"""Unsupervised anomaly detection for acoustic fish-telemetry records."""

from .errors import DataError, LeakageError, TrainingError

__version__ = "0.1.0"

__all__ = ["DataError", "LeakageError", "TrainingError", "__version__"]
