"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line runner:
2 for configuration or input problems, 3 for numerical failures.
"""

from __future__ import annotations


class AnosovLabError(Exception):
    exit_code = 3


class InvalidInput(AnosovLabError, ValueError):
    exit_code = 2


class ConfigError(InvalidInput):
    pass


class UnsupportedDimension(InvalidInput):
    pass


class WrongSignature(InvalidInput):
    """Raised when an operation needs a particular (dim E^s, dim E^u)."""


UnsupportedSignature = WrongSignature


class InvalidRates(InvalidInput):
    pass


class InvalidLeg(InvalidInput):
    pass


class NullHomologyError(InvalidInput):
    pass


class PairingIncomplete(InvalidInput):
    pass


class NumericalFailure(AnosovLabError, ArithmeticError):
    exit_code = 3


class NoConvergence(NumericalFailure):
    pass


class Degenerate(NumericalFailure):
    pass


class SplittingNotResolved(NumericalFailure):
    pass


class NotAnosovEvidence(NumericalFailure):
    pass


class ContinuationFailed(NumericalFailure):
    pass


class ShadowingFailed(NumericalFailure):
    pass


class WindowTooSmall(NumericalFailure):
    pass


class Inconclusive(NumericalFailure):
    pass


class ChartFailed(NumericalFailure):
    pass


class OutOfChart(ChartFailed):
    pass


class DecompositionFailed(NumericalFailure):
    pass
