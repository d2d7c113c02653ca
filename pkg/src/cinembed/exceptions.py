"""Error hierarchy shared by the library and the command line app.

The command line app maps each class to an exit code (see ``exit_code``).
"""


class CinembedError(Exception):
    """Base class for errors raised by cinembed."""

    exit_code = 1


class UsageError(CinembedError):
    """Inconsistent or missing options."""

    exit_code = 2


class DataError(CinembedError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class SplitError(DataError):
    """A train/test split could not be built."""


class DivergenceError(CinembedError, ArithmeticError):
    """Objective or loss became non-finite.

    ``step`` is the outer iteration (solver) or epoch (GNN) where it happened.
    """

    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


def exit_code(error):
    if isinstance(error, CinembedError):
        return error.exit_code
    return 1
