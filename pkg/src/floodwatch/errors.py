"""Exception types raised across the package."""


class FloodwatchError(Exception):
    """Base class for all package errors."""


class DimensionTooSmall(FloodwatchError, ValueError):
    pass


class DimensionMismatch(FloodwatchError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class EmptyDataset(FloodwatchError, ValueError):
    pass


class EmptyBatch(FloodwatchError, ValueError):
    pass


class NonFiniteInput(FloodwatchError, ValueError):
    pass


class InvalidSize(FloodwatchError, ValueError):
    pass


class InvalidWindow(InvalidSize):
    pass


class MarginTooLarge(FloodwatchError, ValueError):
    pass


class NonSquarePatch(FloodwatchError, ValueError):
    pass


class ZeroBaseline(FloodwatchError, ZeroDivisionError):
    """Percent change requested against a class with no baseline pixels."""


class AllLinesMalformed(FloodwatchError, ValueError):
    pass


class EmptyStoplistFile(FloodwatchError, OSError):
    pass


class UnknownTerm(FloodwatchError, KeyError):
    pass


class EmptyCorpus(FloodwatchError, ValueError):
    pass


class ExactnessCapExceeded(FloodwatchError, RuntimeError):
    pass


class InfeasibleSolution(FloodwatchError, ValueError):
    pass


class UnparseableTimestamp(FloodwatchError, ValueError):
    pass


class RunIdMismatch(FloodwatchError, ValueError):
    pass
