"""Exception hierarchy shared by every folkfed module.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""

from __future__ import annotations


class FolkError(Exception):
    exit_code = 1


class UsageError(FolkError):
    exit_code = 1


class DslSyntaxError(FolkError):
    """Raised by the DSL parser; carries a 1-based line/column."""

    exit_code = 1

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


class NotFound(FolkError):
    exit_code = 2


class PermissionDenied(FolkError):
    exit_code = 3


class Conflict(FolkError):
    exit_code = 4


class TransportError(FolkError):
    exit_code = 5


class IntegrityError(FolkError):
    """Hash or signature mismatch on data that should be self-verifying."""

    exit_code = 1


class CycleError(FolkError):
    exit_code = 4

    def __init__(self, message: str, cycle: tuple = ()):
        self.cycle = tuple(cycle)
        super().__init__(message)
