"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so raise the narrowest class that fits.
"""


class LgcdeError(Exception):
    """Base class for all package errors."""


class ValidationError(LgcdeError, ValueError):
    """Input data or arguments violate a documented contract."""


class ParseError(ValidationError):
    """A CSV cell could not be read as a number."""

    def __init__(self, row, col, cell):
        self.row = row
        self.col = col
        self.cell = cell
        super().__init__(f"non-numeric cell {cell!r} at ({row},{col})")


class NumericalError(LgcdeError, ArithmeticError):
    """A numerical procedure failed or is undefined at the requested point."""


class NoLocalMassError(NumericalError):
    """Every kernel weight at an evaluation point underflowed."""

    def __init__(self, message="no local mass at evaluation point"):
        super().__init__(message)


class UnsupportedError(LgcdeError, NotImplementedError):
    """The requested combination of options is not implemented."""
