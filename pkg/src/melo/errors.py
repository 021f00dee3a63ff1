"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class MeloError(Exception):
    """Base class for every error raised by this package."""


# --- core model ---------------------------------------------------------


class MalformedQid(MeloError):
    """A Wikidata identifier does not match ``Q[0-9]+``."""

    def __init__(self, qid: object, field: str = "qid") -> None:
        super().__init__(f"{field}: not a well-formed Qid: {qid!r}")
        self.qid = qid
        self.field = field


class EmptyMention(MeloError):
    """Mention surface form is empty after trimming whitespace."""

    def __init__(self, field: str = "words") -> None:
        super().__init__(f"{field}: mention surface form is empty")
        self.field = field


# --- agent gateway ------------------------------------------------------


class BackendUnreachable(MeloError):
    """The model backend could not be reached (network / IO failure)."""


class BackendRefused(MeloError):
    """The model backend answered with an HTTP error status."""

    def __init__(self, status: int, detail: str = "") -> None:
        super().__init__(f"backend refused request: HTTP {status} {detail}".rstrip())
        self.status = status


class ImageMissing(MeloError):
    """A vision request was made without any image attached."""


# --- modal fuser --------------------------------------------------------


class EmptyContext(MeloError):
    """Mention has no context to summarize."""


class FormatViolation(MeloError):
    """An agent reply did not contain the expected structure."""


class NoVisualInput(MeloError):
    """Neither an image nor a precomputed image description is available."""


class MissingSummary(MeloError):
    """Fusion was requested before the context summary stage ran."""


# --- kg retrieval -------------------------------------------------------


class KgUnreachable(MeloError):
    """The knowledge-graph endpoint could not be reached."""


class CacheMiss(MeloError):
    """Offline mode was asked for a request that is not in the cache."""

    def __init__(self, key: str, detail: str = "") -> None:
        super().__init__(f"cache miss for {detail or key}")
        self.key = key


class MalformedResponse(MeloError):
    """The knowledge-graph API returned a body we cannot interpret."""


class NotFound(MeloError):
    """The requested entity does not exist in the knowledge graph."""

    def __init__(self, qid: str) -> None:
        super().__init__(f"entity not found: {qid}")
        self.qid = qid


# --- similarity ---------------------------------------------------------


class EmptyText(MeloError):
    """A similarity input tokenized to zero tokens."""


class ScorerUnreachable(MeloError):
    """The remote embedding scorer could not be reached."""


class ScorerProtocolError(MeloError):
    """The remote embedding scorer replied outside its wire contract."""


# --- candidate adapter --------------------------------------------------


class EmptyCandidates(MeloError):
    """Knowledge-graph search returned no entities for the mention."""


# --- entity clozer ------------------------------------------------------


class MissingFusedDescription(MeloError):
    """A stage that needs the fused description ran before fusion."""


class ParseFailure(MeloError):
    """No option index could be parsed from the agent reply."""


class OutOfRange(MeloError):
    """The parsed option index is outside 1..k."""

    def __init__(self, index: int, k: int) -> None:
        super().__init__(f"option index {index} outside 1..{k}")
        self.index = index
        self.k = k


# --- evaluation ---------------------------------------------------------


class EmptyResults(MeloError):
    """Accuracy was requested over an empty result list."""


class IngestError(MeloError):
    """Dataset ingestion aborted because of malformed lines."""

    def __init__(self, line_errors: list[tuple[int, str]]) -> None:
        lines = ", ".join(str(n) for n, _ in line_errors)
        super().__init__(f"{len(line_errors)} malformed line(s): {lines}")
        self.line_errors = line_errors


class ConfigError(MeloError):
    """The run configuration is missing or inconsistent."""
