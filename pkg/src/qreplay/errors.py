"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is an ordinary bug.
"""


class QReplayError(Exception):
    """Base class for package errors."""


class ShapeError(QReplayError):
    """Array dimensions do not match what an operation requires."""


class InsufficientDataError(QReplayError):
    """A buffer or support set is too small for the requested operation."""


class ConfigError(QReplayError):
    """Invalid experiment configuration (unknown key, bad value, ...)."""


class DataError(QReplayError):
    """Problem with external data: missing file, bad IDX magic, truncation."""


class NumericError(QReplayError):
    """Runtime numeric failure: non-finite loss, eigensolver non-convergence."""


class AggregationError(QReplayError):
    """Raw metric rows are inconsistent across seeds (missing cells)."""


class DegenerateSpectrumError(NumericError):
    """All eigenvalues are zero; effective rank is undefined."""
