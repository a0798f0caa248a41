"""Exception taxonomy shared across the package.

Everything derives from ArcsError so callers (and the CLI) can catch one
base class. ValueError is kept as a parent so sloppy call sites that only
guard against ValueError still behave.
"""


class ArcsError(ValueError):
    """Base class for all package-specific errors."""


class ConfigError(ArcsError):
    """Invalid trial or experiment configuration."""


class DecompositionError(ArcsError):
    """Matrix factorization failed or its preconditions were violated."""


class ConvergenceError(ArcsError):
    """An iterative solver hit its sweep budget before converging."""


class DrawBudgetError(ArcsError):
    """Rerandomization exhausted its redraw budget without acceptance."""


class ImbalanceUndefinedError(ArcsError):
    """An imbalance measure was requested in a state where it is undefined."""


class CalibrationError(ArcsError):
    """Calibration input data failed validation (rank, missing values, schema)."""


class ReplicationError(ArcsError):
    """Too many replications failed for the aggregate to be trustworthy."""
