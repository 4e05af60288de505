"""Exception types shared across the toolkit."""


class BotsieveError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(BotsieveError):
    """Invalid or missing configuration detected before processing starts."""


class PreconditionError(BotsieveError):
    """An operation was called on data in the wrong state (e.g. raw vs anonymized IPs)."""


class ParseError(BotsieveError):
    """A log line or normalized row could not be parsed.

    ``kind`` is one of ``malformed-line``, ``missing-ua-capture`` or
    ``schema-mismatch``.
    """

    def __init__(self, kind: str, message: str = "", line_number: int | None = None):
        self.kind = kind
        self.line_number = line_number
        where = f" (line {line_number})" if line_number is not None else ""
        super().__init__(f"{kind}{where}: {message}" if message else f"{kind}{where}")


class FormatError(BotsieveError):
    """A reference-data or verdict file is not in the expected format."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"entry {index}: {message}")


class ValidationError(BotsieveError):
    """Reference data failed a consistency check."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


class DegenerateInput(BotsieveError):
    """Statistical input for which the requested quantity is undefined."""


class MissingVerdict(BotsieveError):
    """Evaluation found labelled requests without a verdict."""

    def __init__(self, keys):
        self.keys = list(keys)
        shown = ", ".join(repr(k) for k in self.keys[:10])
        more = f" (+{len(self.keys) - 10} more)" if len(self.keys) > 10 else ""
        super().__init__(f"no verdict for {len(self.keys)} key(s): {shown}{more}")
