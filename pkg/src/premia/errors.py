"""Exception hierarchy.

Input problems (bad files, bad arguments) and numerical degeneracy are kept
apart because the command line maps them to different exit codes.
"""

from __future__ import annotations


class PremiaError(Exception):
    """Base class for every error raised by this package."""


class InputError(PremiaError, ValueError):
    """Malformed or inconsistent user input (files, flags, shapes)."""


class DegeneracyError(PremiaError, ArithmeticError):
    """A numerical object needed by a statistic is singular or undefined."""


class SingularMatrixError(DegeneracyError):
    def __init__(self, what: str, condition: float | None = None):
        self.what = what
        self.condition = condition
        msg = f"singular {what}"
        if condition is not None:
            msg += f" (condition number {condition:.3g})"
        super().__init__(msg)


class RankDeficientError(DegeneracyError):
    """Cross-section regressors are (near) collinear."""

    def __init__(self, msg: str, columns: tuple[int, int] | None = None):
        self.columns = columns
        super().__init__(msg)


class CueUnboundedError(DegeneracyError):
    """The smallest-root eigenvector has a (near) zero first element.

    The premia are then not identified: the CUE objective is minimised at
    infinity along ``eigvec``.
    """

    def __init__(self, eigvec):
        self.eigvec = eigvec
        super().__init__("CUE unbounded / premia not identified: first component "
                         "of the smallest-root eigenvector is numerically zero")
