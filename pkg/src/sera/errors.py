"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SeraError(Exception):
    """Base class for all package errors."""


class ValidationError(SeraError, ValueError):
    """A domain object violates one of its invariants."""


class SchemaError(SeraError):
    """A persisted line failed to parse into a record."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DuplicateId(SeraError):
    pass


class NotFound(SeraError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyText(SeraError, ValueError):
    pass


class EmptyPatternSet(SeraError, ValueError):
    pass


class EmptyBank(SeraError, ValueError):
    pass


class EmptyRouteSet(SeraError, ValueError):
    pass


class ConflictingSuggestions(SeraError):
    pass


class LlmUnavailable(SeraError):
    """The endpoint could not be reached or returned a transport error."""


class MalformedLlmOutput(SeraError):
    """A response failed schema or reference validation."""


class FixtureMissing(SeraError):
    """Replay mode found no recorded response for a request hash."""


class ConfigError(SeraError):
    pass


class StageError(SeraError):
    """Wraps an error raised inside one stage of the repair pipeline."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
