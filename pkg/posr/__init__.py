"""Subject-independent EEG classification with prototype-based open-set subject recognition."""

__version__ = "0.1.0"
