"""Exception hierarchy for ivforge.

Every exception carries an ``exit_code`` that the CLI returns unchanged:
2 for config/spec problems, 3 for identification failures, 4 for I/O and
data-file problems.
"""


class IvForgeException(Exception):
    exit_code: int = 1


# -------------------------------------------------------------------------
# Config / spec errors (exit 2)
# -------------------------------------------------------------------------

class ConfigError(IvForgeException):
    exit_code = 2


class InvalidSpec(ConfigError):
    pass


class NonPositiveDefinite(InvalidSpec):
    pass


class MissingColumn(ConfigError):
    def __init__(self, name: str) -> None:
        super().__init__(f"column {name!r} not found in CSV header")
        self.name = name


class IndexOutOfRange(ConfigError):
    pass


# -------------------------------------------------------------------------
# Numerical / identification errors (exit 3)
# -------------------------------------------------------------------------

class IdentificationError(IvForgeException):
    exit_code = 3


class RankDeficient(IdentificationError):
    def __init__(self, column: int, message: str = "") -> None:
        super().__init__(message or f"design matrix is rank deficient at column {column}")
        self.column = column


class Unidentified(IdentificationError):
    pass


class AllUnidentified(Unidentified):
    pass


class MissingExcluded(IdentificationError):
    pass


class NoRoot(IdentificationError):
    def __init__(self, bracket: tuple[float, float], message: str = "") -> None:
        lo, hi = bracket
        super().__init__(message or f"no sign change of the calibration residual on ({lo:g}, {hi:g})")
        self.bracket = bracket


class LengthMismatch(IvForgeException):
    exit_code = 3


class NonFinite(IvForgeException):
    exit_code = 3


class DomainError(IvForgeException):
    exit_code = 3

    def __init__(self, transform: str, row: int, col: int) -> None:
        super().__init__(f"{transform} undefined at row {row}, column {col}")
        self.transform = transform
        self.row = row
        self.col = col


class TooFewPerBin(IvForgeException):
    exit_code = 3


# -------------------------------------------------------------------------
# I/O and data-file errors (exit 4)
# -------------------------------------------------------------------------

class IoError(IvForgeException):
    exit_code = 4


class EmptyFile(IoError):
    pass


class MalformedFile(IoError):
    pass


class NonNumericCell(IoError):
    def __init__(self, row: int, col: str, value: str) -> None:
        super().__init__(f"non-numeric cell {value!r} at row {row}, column {col!r}")
        self.row = row
        self.col = col


# -------------------------------------------------------------------------
# Warnings
# -------------------------------------------------------------------------

class ConditioningWarning(UserWarning):
    pass


class WeakInstrumentWarning(UserWarning):
    pass


class UnmappedColumnsWarning(UserWarning):
    pass
