"""Exception hierarchy shared by every layer of the engine.

Each concrete error carries a ``category`` so the CLI can map any failure to
exactly one exit code.
"""

from __future__ import annotations


class DPQueryError(Exception):
    category = "internal"


class PrivacyParameterError(DPQueryError, ValueError):
    """A privacy or mechanism parameter is outside its domain."""

    category = "privacy-parameter"


class BoundsInferenceError(DPQueryError):
    """No histogram bin cleared the automatic-bounds threshold."""

    category = "privacy-parameter"


class QueryError(DPQueryError):
    category = "parse"


class LexError(QueryError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ParseError(QueryError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected one of: {', '.join(expected)})"
        super().__init__(detail)
        self.offset = offset
        self.expected = expected


class NameResolutionError(QueryError):
    """Unknown table or column, or an ambiguous column reference."""


class TypeMismatchError(QueryError):
    pass


class UnsupportedQueryError(QueryError):
    pass


class OwnershipError(DPQueryError):
    """An operator would create rows owned by more than one user."""

    category = "ownership"

    def __init__(self, message: str, operator: str | None = None):
        super().__init__(message if operator is None else f"{operator}: {message}")
        self.operator = operator


class IngestError(DPQueryError):
    category = "io"


class EvalError(DPQueryError):
    """Runtime fault while evaluating an expression on a row.

    Anonymized execution never lets this escape; it is caught, logged to the
    diagnostics logger and the offending value is replaced.
    """

    category = "internal"
