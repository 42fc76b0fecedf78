"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class GateRAGError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GateRAGError):
    """Invalid or inconsistent configuration."""


class DataError(GateRAGError):
    """Bad input data: corpus, graph file, QA file."""


class NodeNotFoundError(DataError, KeyError):
    def __init__(self, node_id: str):
        super().__init__(node_id)
        self.node_id = node_id

    def __str__(self) -> str:
        return f"unknown node id: {self.node_id!r}"


class DimensionMismatchError(DataError, ValueError):
    pass


class GraphVersionError(DataError):
    pass


class GraphParseError(DataError):
    """Corrupt graph file; ``offset`` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ExtractionParseError(DataError):
    """No record could be parsed from an extraction response."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class EmptyTextError(DataError, ValueError):
    """Text has no tokens, so no unit vector exists for it."""


class ProviderError(GateRAGError):
    """Any failure talking to a chat or embedding backend."""


class AuthError(ProviderError):
    pass


class RateLimitError(ProviderError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class TransientProviderError(ProviderError):
    pass


class MalformedResponseError(ProviderError):
    pass


class NoMatchError(ProviderError):
    """A strict mock had no rule for the prompt."""


class ReplayMissError(ProviderError):
    """Replay transcript has no entry for the request."""
