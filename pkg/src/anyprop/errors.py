"""Exception types shared across the package."""

from __future__ import annotations


class ParseError(ValueError):
    """Malformed record in a serialized stream or config file.

    Carries the location of the offending input: a 1-based line number for
    text formats, a byte offset for binary formats.
    """

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class InsufficientDataError(ValueError):
    """An event stream does not cover the time span an operation requires."""

    def __init__(self, missing_t0_us: int, missing_t1_us: int):
        super().__init__(
            f"event stream does not cover the required span: missing "
            f"[{missing_t0_us} us, {missing_t1_us} us]"
        )
        self.missing_span_us = (missing_t0_us, missing_t1_us)
