"""Exception types shared across the package."""

from __future__ import annotations


class GevChangeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(GevChangeError, ValueError):
    """An argument violates a documented precondition."""


class InsufficientDataError(GevChangeError):
    """Too few observations to run the requested estimator."""


class DegenerateDataError(GevChangeError):
    """Data admit no meaningful fit (e.g. all block maxima identical)."""


class NumericDegeneracyError(GevChangeError):
    """A computation hit a numerically degenerate configuration."""


class ParseError(GevChangeError):
    """A malformed input file. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateRecordError(ParseError):
    """Two rows claim the same (station, date)."""


class ResamplingFailureError(GevChangeError):
    """Too many resampling replicates failed to refit."""
