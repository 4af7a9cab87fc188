"""Exception types shared across the package."""


class MCForestError(Exception):
    """Base class for package errors."""


class DataError(MCForestError, ValueError):
    """Invalid or inconsistent input data."""


class ConfigError(MCForestError, ValueError):
    """Invalid configuration file or settings."""


class EstimationError(MCForestError, RuntimeError):
    """Training or estimation could not be carried out."""


class NoSupportError(EstimationError):
    """Too many trees lack the needed treatments at an evaluation point."""

    def __init__(self, message, skipped=0, n_trees=0):
        super().__init__(message)
        self.skipped = skipped
        self.n_trees = n_trees
