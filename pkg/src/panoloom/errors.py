"""Exception hierarchy shared by all panoloom modules.

Every error carries an ``exit_code`` so the CLI can map failures onto its
fixed taxonomy (2 usage, 3 validation, 4 routing, 5 numeric).
"""

from __future__ import annotations


class PanoloomError(Exception):
    exit_code = 1


class UsageError(PanoloomError):
    exit_code = 2


class DomainError(PanoloomError, ValueError):
    """An argument lies outside the domain of the operation."""

    exit_code = 3


class ValidationError(PanoloomError):
    exit_code = 3


class DegenerateStep(ValidationError):
    """A camera path contains a zero-length displacement."""


class AlignmentError(ValidationError):
    pass


class ParseError(PanoloomError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RoutingError(PanoloomError):
    exit_code = 4

    def __init__(self, message: str, pair: tuple | None = None):
        super().__init__(message)
        self.pair = pair


class NumericError(PanoloomError, ArithmeticError):
    exit_code = 5
