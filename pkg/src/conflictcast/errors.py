"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class ConflictCastError(Exception):
    """Base class for every error raised by this package."""


# ingestion
class UnreadableStream(ConflictCastError):
    pass


class ColumnMapIncomplete(ConflictCastError):
    pass


class MissingHeader(ConflictCastError):
    pass


class FetchFailed(ConflictCastError):
    def __init__(self, url: str, status: int | str):
        super().__init__(f"fetch failed for {url}: {status}")
        self.url = url
        self.status = status


class EmptyBody(ConflictCastError):
    pass


# labeling
class EmptyRange(ConflictCastError):
    pass


class WindowTooShort(ConflictCastError):
    pass


class EmptyInput(ConflictCastError):
    pass


# retrieval
class EmbedFailed(ConflictCastError):
    pass


class NotEmbeddable(ConflictCastError):
    pass


class DimsMismatch(ConflictCastError):
    pass


# forecasting
class TemplateMissingPlaceholder(ConflictCastError):
    pass


class ParseError(ConflictCastError):
    """Base for reply-parsing failures."""


class MissingLabel(ParseError):
    pass


class MissingFatalities(ParseError):
    pass


class AmbiguousLabel(ParseError):
    pass


# llm client
class ProviderExhausted(ConflictCastError):
    pass


class AuthMissing(ConflictCastError):
    pass


class ReplayMiss(ConflictCastError):
    pass


class NoScriptMatch(ConflictCastError):
    pass


# evaluation
class NoScorableRecords(ConflictCastError):
    pass


class ConfigError(ConflictCastError):
    pass
