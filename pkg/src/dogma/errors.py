"""Exception hierarchy. Every anticipated failure raises a DogmaError
subclass; the CLI maps them to exit codes (config 2, data 3, internal 4).
"""

from __future__ import annotations


class DogmaError(Exception):
    """Base class for all structured errors raised by this package."""


class ConfigError(DogmaError):
    """Invalid configuration: bad value, unknown key, missing section."""


class DataError(DogmaError):
    """Invalid or inconsistent input data."""


class ValidationError(DataError):
    """An in-memory object violates one of its declared invariants."""


class ParseError(DataError):
    """A file could not be parsed. Carries path and 1-based line number."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        self.message = message
        loc = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{loc}: {message}")
