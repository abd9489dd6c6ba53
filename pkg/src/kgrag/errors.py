"""Exception hierarchy shared across the package."""


class KGError(Exception):
    """Base class for all kgrag errors."""


class ArgumentError(KGError, ValueError):
    pass


class IntegrityError(KGError):
    """An operation would break referential integrity of the graph."""


class NotFoundError(KGError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class StoreFormatError(KGError):
    """A persisted file is missing or corrupt.

    ``path`` and ``line`` point at the offending record when known.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path if line is None else f"{self.path} line {line}"
            where += ": "
        super().__init__(where + message)


class ProviderError(KGError):
    """A remote model service returned an error response."""

    def __init__(self, message: str, status: int | None = None, body: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = body


class RetryableError(ProviderError):
    """Transport-level failure; ``attempts`` is how many calls were made."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ParseError(ProviderError):
    """Provider output could not be parsed; carries the raw response."""

    def __init__(self, message: str, raw: str):
        super().__init__(message, body=raw)
        self.raw = raw


class UnprocessableError(KGError):
    pass


class BuildError(KGError):
    """Graph build aborted; names the failing document and chunk."""

    def __init__(self, message: str, doc_id: str, chunk_id: str | None = None):
        self.doc_id = doc_id
        self.chunk_id = chunk_id
        loc = f"doc {doc_id!r}" + (f", chunk {chunk_id!r}" if chunk_id else "")
        super().__init__(f"{loc}: {message}")
