# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions raised by the mvlr library.

Every error carries an `exit_code`, which the command line entry point returns as the
process status.
"""


class MvlrError(Exception):
    """Base exception class for any error handled by this library."""

    exit_code = 1

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class InvalidInputError(MvlrError):
    """Exception to raise when an operation receives inputs violating its contract."""

    exit_code = 2


class NumericError(MvlrError):
    """Exception to raise when a numerical kernel fails to converge."""

    exit_code = 3


class NotPositiveSemidefiniteError(InvalidInputError):
    """Exception to raise when a matrix expected to be PSD has a negative eigenvalue."""

    def __init__(self, min_eigenvalue: float, max_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"Matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e} "
            f"with largest eigenvalue {max_eigenvalue:.3e}."
        )


class DegenerateInputError(InvalidInputError):
    """Exception to raise when an input carries no information, e.g. an all-zero spectrum."""


class LookupMissError(MvlrError):
    """Exception to raise when no learned region matches a vehicle pose."""

    exit_code = 4


class FormatVersionError(MvlrError):
    """Exception to raise when a persisted file has a foreign magic string or version."""

    exit_code = 5


class ConfigValidationError(MvlrError):
    """Exception to raise when a configuration is rejected before any computation."""

    exit_code = 6
