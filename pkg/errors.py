"""Exception hierarchy shared by every failspec module."""


class FailspecError(Exception):
    """Base class for all failspec errors."""

    exit_code = 1


class DimensionMismatchError(FailspecError, ValueError):
    """Vector or matrix sizes disagree."""

    exit_code = 2


class SystemFormatError(FailspecError, ValueError):
    """A text artifact (system file, logical set, CSV) could not be parsed."""

    exit_code = 2

    def __init__(self, message, line_number=None, path=None):
        self.line_number = line_number
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line_number is not None:
            where += f":{line_number}" if where else f"line {line_number}"
        super().__init__(f"{where}: {message}" if where else message)


class InfeasibleSyndromeError(FailspecError):
    """The syndrome is not in the column space of the check matrix."""

    exit_code = 3


class BudgetExhaustedError(FailspecError):
    """A node, table, trial or wall-clock budget ran out before completion."""

    exit_code = 4


class ConnectivityError(FailspecError, ValueError):
    """Exact enumeration requested beyond the connected-support guarantee."""

    exit_code = 2


class FitError(FailspecError, ValueError):
    """A fit or root solve is ill-posed."""

    exit_code = 2


class InvariantError(FailspecError, AssertionError):
    """An internal invariant was violated."""

    exit_code = 1
