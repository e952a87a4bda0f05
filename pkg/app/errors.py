"""
Error types shared across the detection pipeline.

Anything a user can fix by correcting an input file derives from InputError;
the CLI maps those to exit code 2 and the ingest API to HTTP 422.
"""


class IDPSError(Exception):
    """Base class for every error raised by this package."""


class InputError(IDPSError, ValueError):
    """Malformed or inconsistent input (trace, rules, profile, scenario)."""


class TraceError(InputError):
    """A trace line failed to parse or validate."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.reason = message


class TraceOrderError(TraceError):
    """Event timestamps went backwards."""


class RuleError(InputError):
    """Rule text did not parse."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        self.reason = message
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(f"{where}{message}")


class DuplicateSidError(RuleError):
    """Two rules share a sid."""


class ProfileError(InputError):
    """Profile file is malformed, incomplete or from an unsupported version."""


class ScenarioError(InputError):
    """Simulator configuration is invalid."""


class TraceDigestError(InputError):
    """Alerts were produced from a different trace than the one given as truth."""
