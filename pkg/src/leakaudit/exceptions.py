"""Exception hierarchy; the CLI maps each family to an exit code."""


class LeakAuditError(Exception):
    pass


class ConfigError(LeakAuditError, ValueError):
    """Bad configuration or command-line usage."""


class DatasetError(LeakAuditError, ValueError):
    """Malformed, invalid or incompatible data."""


class SplitError(DatasetError):
    """A split cannot be produced for the given data and configuration."""


class SetupError(DatasetError):
    """Dataset kind does not support the requested evaluation setup."""


class SplitVerificationError(LeakAuditError):
    """A produced split violates its declared policy."""


class TrainingError(LeakAuditError, RuntimeError):
    """Training failed, e.g. the loss became non-finite."""
