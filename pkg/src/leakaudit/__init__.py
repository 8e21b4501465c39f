"""Subject-identity leakage auditing for subject-grouped time-series classifiers."""

__version__ = "0.1.0"
