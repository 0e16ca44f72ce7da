"""
Exception hierarchy for boxrec.

Each exception carries the process exit code the CLI returns for it:
  - InputError (2):        missing files, malformed TSV lines, bad config
  - LookupFailure (3):     unknown external ids, indices out of range
  - ContractViolation (4): violated pre-conditions of an operation
"""

from __future__ import annotations

from typing import Optional


class BoxRecError(Exception):
    """Root of all boxrec errors."""

    exit_code: int = 1


class InputError(BoxRecError):
    """Input files or configuration could not be used."""

    exit_code = 2


class ParseError(InputError):
    """A line of an input file could not be parsed."""

    def __init__(self, path: str, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class LookupFailure(BoxRecError, LookupError):
    """An entity id or index does not exist."""

    exit_code = 3

    def __init__(self, message: str, suggestions: Optional[list[str]] = None):
        self.suggestions = suggestions or []
        super().__init__(message)


class ContractViolation(BoxRecError, ValueError):
    """An operation was called outside its pre-conditions."""

    exit_code = 4
