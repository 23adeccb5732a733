"""Exception hierarchy.

Errors fall in two families that the command line maps to distinct exit
codes: ``DataError`` for bad or missing input, ``NumericError`` for
computations that cannot produce a trustworthy answer.
"""

from __future__ import annotations


class GravPriorError(Exception):
    """Base class for every error raised by this package."""


class DataError(GravPriorError):
    pass


class NumericError(GravPriorError):
    pass


class DegenerateVector(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class NonMonotonicTime(DataError):
    pass


class EmptyStream(DataError):
    pass


class EmptyWindow(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyBatch(DataError):
    pass


class FrameBeforeStream(DataError):
    pass


class NoTemporalOverlap(DataError):
    pass


class InsufficientPairs(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class MissingFile(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, path, line: int, reason: str = ""):
        self.path = str(path)
        self.line = line
        self.reason = reason
        msg = f"{self.path}:{line}: malformed row"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
