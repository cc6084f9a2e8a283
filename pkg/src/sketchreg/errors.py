"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""

from __future__ import annotations


class SketchRegError(Exception):
    exit_code = 3


# --- usage / configuration -------------------------------------------------


class ConfigError(SketchRegError):
    exit_code = 1

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class OutOfDomain(SketchRegError, ValueError):
    exit_code = 1


class UnsupportedScheme(SketchRegError, ValueError):
    exit_code = 1


class BadRatio(SketchRegError, ValueError):
    exit_code = 1


# --- data ------------------------------------------------------------------


class DataError(SketchRegError):
    exit_code = 2


class DimensionMismatch(DataError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, col: int | str, message: str = "could not parse cell"):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col}: {message}")


class NonNumericCell(ParseError):
    pass


class MissingColumn(DataError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"missing column {self.name!r}"


class DuplicateRowIndex(DataError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row index {index} arrived twice")


class BadProbabilities(DataError, ValueError):
    pass


class MTooLarge(DataError, ValueError):
    pass


# --- numerical -------------------------------------------------------------


class NumericalError(SketchRegError):
    exit_code = 3


class RankDeficient(NumericalError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"rank deficient: R diagonal {index} below tolerance")


class NoConvergence(NumericalError):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"no convergence after {cap} iterations")


class NotPowerOfTwo(NumericalError, ValueError):
    pass


class NotIdentified(NumericalError):
    pass


class SketchTooSmall(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass


class ZeroEffect(NumericalError, ValueError):
    pass


class ConditionIVFailed(NumericalError):
    """Instrument-strength precondition of the worst-case bound is unmet.

    Not a bound violation: the instance is simply untestable.
    """

    def __init__(self, errors):
        self.errors = errors
        super().__init__(
            "sigma_min^2(U_Z^T U_X) < 2 f1(eps1, eps2); bound not applicable"
        )


# --- verification ----------------------------------------------------------


class VerificationFailed(SketchRegError):
    exit_code = 4
