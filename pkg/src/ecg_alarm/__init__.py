"""Two-stage ECG alarm classification with predictive yellow alarms."""

__version__ = "0.1.0"
