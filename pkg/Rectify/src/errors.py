"""Exception hierarchy shared by every module; each class knows its CLI exit code."""

from typing import Any, Optional


class RectifyError(Exception):
    """Base class for all errors raised by the library"""

    exit_code = 1

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.__class__.__name__)
        self.details = details


# Usage / input errors (exit 2)
class InputError(RectifyError):
    exit_code = 2


class InvalidShape(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class ZeroMatrix(InputError):
    pass


class MatrixFormatError(InputError):
    pass


class ExcessRank(InputError):
    pass


# Algorithm-declared failures (exit 3)
class AlgorithmFailure(RectifyError):
    exit_code = 3


class RankDeficientA(AlgorithmFailure):
    pass


class NoRealization(AlgorithmFailure):
    pass


class BudgetExceeded(AlgorithmFailure):
    pass


class RankDeficientBasis(AlgorithmFailure):
    pass


class AmbiguousSign(AlgorithmFailure):
    pass


class NoFeasibleSign(AlgorithmFailure):
    pass


class NoSolution(AlgorithmFailure):
    pass


class RankDeficientHidden(AlgorithmFailure):
    pass


class TooFewClusters(AlgorithmFailure):
    pass


class WhiteningFailed(AlgorithmFailure):
    pass


class DegenerateSum(AlgorithmFailure):
    pass


class NoConvergence(AlgorithmFailure):
    """Iteration budget exhausted; `partial` holds the best result found"""

    def __init__(self, message: str = "", partial: Optional[Any] = None, **details: Any):
        super().__init__(message, **details)
        self.partial = partial


# Floating-point breakdowns (exit 4)
class NumericalFailure(RectifyError):
    exit_code = 4
