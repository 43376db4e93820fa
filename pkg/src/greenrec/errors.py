"""Exception hierarchy.

Everything raised on purpose by the package derives from ``GreenRecError`` so
callers (the CLI in particular) can separate expected failures from bugs.
"""

from __future__ import annotations


class GreenRecError(Exception):
    """Base class for all expected failures."""


# -- ingestion ---------------------------------------------------------------


class IngestError(GreenRecError):
    pass


class MalformedLine(IngestError):
    def __init__(self, line_no: int, reason: str, path: str | None = None) -> None:
        self.line_no = line_no
        self.reason = reason
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {reason}")


class DuplicateId(IngestError):
    def __init__(self, item_id: str, line_no: int | None = None) -> None:
        self.item_id = item_id
        self.line_no = line_no
        suffix = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate item id {item_id!r}{suffix}")


class DuplicateSession(IngestError):
    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        super().__init__(f"duplicate session id {session_id!r}")


class UnknownItem(IngestError):
    def __init__(self, session_id: str, item_id: str) -> None:
        self.session_id = session_id
        self.item_id = item_id
        super().__init__(f"session {session_id!r} references unknown item {item_id!r}")


class EmptySession(IngestError):
    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        super().__init__(f"session {session_id!r} has no interactions")


class CatalogTooSmall(IngestError):
    def __init__(self, size: int, needed: int) -> None:
        self.size = size
        self.needed = needed
        super().__init__(f"catalog has {size} items, need at least {needed}")


# -- stage 1 -----------------------------------------------------------------


class ScorerFailure(GreenRecError):
    pass


# -- LLM backend -------------------------------------------------------------


class BackendError(GreenRecError):
    pass


class Timeout(BackendError):
    pass


class TransportError(BackendError):
    pass


class BadStatus(BackendError):
    def __init__(self, code: int, body: str = "") -> None:
        self.code = code
        self.body = body
        super().__init__(f"HTTP {code}: {body[:200]}")


class EmptyCompletion(BackendError):
    pass


class MockNoMatch(BackendError):
    """The mock script has no response for a request."""


# -- response parsing --------------------------------------------------------


class ParseError(GreenRecError):
    pass


class Unparseable(ParseError):
    pass


class TagNotFound(ParseError):
    pass


class NoVariants(ParseError):
    pass


class NoReasons(ParseError):
    pass


class MissingPlaceholders(ParseError):
    def __init__(self, missing: list[str]) -> None:
        self.missing = missing
        super().__init__(f"prompt lacks placeholder(s): {', '.join(missing)}")


# -- orchestration / CLI -----------------------------------------------------


class Aborted(GreenRecError):
    def __init__(self, trial: int) -> None:
        self.trial = trial
        super().__init__(f"aborted at trial {trial}: every session failed for 3 consecutive trials")


class ConfigError(GreenRecError):
    pass


class MissingArtifact(GreenRecError):
    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"missing artifact: {path}")
