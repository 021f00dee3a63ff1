"""Text-similarity scorers used to filter candidates.

Two scorers are pluggable behind one interface: a native sentence-level BLEU
and a thin client for the remote embedding scorer service (BERTScore-style).
Candidate text ``C_d`` is the entity description concatenated with its
serialized attributes, so neither signal is lost.
"""

from __future__ import annotations

import math
import threading
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping

import httpx

from .errors import EmptyText, ScorerProtocolError, ScorerUnreachable
from .model import Candidate, Entity

SMOOTHING_MODES = ("none", "add-one")

# reference = fused mention description (the default direction); flip with
# Scorer config {"direction": "ref_is_candidate"}.
DIRECTION_REF_IS_MENTION = "ref_is_mention"
DIRECTION_REF_IS_CANDIDATE = "ref_is_candidate"


def _strip_edge_punctuation(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip edge punctuation per token."""
    tokens = []
    for raw in text.lower().split():
        token = _strip_edge_punctuation(raw)
        if token:
            tokens.append(token)
    return tokens


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    reference: str,
    hypothesis: str,
    max_ngram: int = 4,
    smoothing: str = "add-one",
) -> float:
    """Sentence-level BLEU of ``hypothesis`` against a single ``reference``.

    Geometric mean of modified n-gram precisions times the brevity penalty
    ``exp(1 - r/c)`` (applied when the hypothesis is shorter than the
    reference). With ``smoothing="none"`` any zero precision collapses the
    score to 0 and orders longer than the hypothesis are skipped; with
    ``"add-one"`` precisions for n >= 2 become ``(clipped+1)/(total+1)``
    (the unigram stays raw, so zero unigram overlap still scores 0) and
    orders longer than the hypothesis count as precision 1. Under either
    mode ``bleu(a, a) == 1.0`` for any non-empty ``a``.
    """
    if not 1 <= max_ngram <= 4:
        raise ValueError(f"max_ngram must be in [1,4], got {max_ngram}")
    if smoothing not in SMOOTHING_MODES:
        raise ValueError(f"smoothing must be one of {SMOOTHING_MODES}, got {smoothing!r}")

    ref = tokenize(reference)
    hyp = tokenize(hypothesis)
    if not ref:
        raise EmptyText("reference tokenized to zero tokens")
    if not hyp:
        raise EmptyText("hypothesis tokenized to zero tokens")

    log_sum = 0.0
    orders = 0
    for n in range(1, max_ngram + 1):
        total = len(hyp) - n + 1
        if total <= 0:
            if smoothing == "add-one":
                orders += 1  # contributes log(1) = 0
            continue
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(
            min(count, ref_counts[gram])
            for gram, count in _ngram_counts(hyp, n).items()
        )
        if smoothing == "add-one" and n >= 2:
            precision = (clipped + 1) / (total + 1)
        else:
            precision = clipped / total
        if precision == 0.0:
            return 0.0
        log_sum += math.log(precision)
        orders += 1

    if orders == 0:
        return 0.0
    geo_mean = math.exp(log_sum / orders)
    c, r = len(hyp), len(ref)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * geo_mean


# ---------------------------------------------------------------------------
# Scorer handles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scorer:
    """Stateless scorer handle; ``id`` selects which score operation applies."""

    id: str
    config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.id not in ("bleu", "embed"):
            raise ValueError(f"unknown scorer id: {self.id!r}")

    @classmethod
    def for_bleu(
        cls,
        max_ngram: int = 4,
        smoothing: str = "add-one",
        direction: str = DIRECTION_REF_IS_MENTION,
    ) -> "Scorer":
        return cls("bleu", {"max_ngram": max_ngram, "smoothing": smoothing,
                            "direction": direction})

    @classmethod
    def for_embed(cls, service_url: str, timeout_ms: int = 10_000) -> "Scorer":
        return cls("embed", {"service_url": service_url, "timeout_ms": timeout_ms})


@dataclass(frozen=True)
class ScoreRequestBatch:
    """One reference scored against many candidate texts in a single call."""

    reference: str
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidates must be non-empty")


class EmbedClient:
    """HTTP client for the embedding scorer service.

    Wire protocol: POST {service_url}/v1/score with
    ``{"reference": str, "candidates": [str, ...]}`` returning
    ``{"scores": [float, ...]}`` of matching length. Concurrent batches are
    allowed; in-flight requests are capped (default 2).
    """

    def __init__(
        self,
        service_url: str,
        timeout_ms: int = 10_000,
        max_in_flight: int = 2,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.service_url = service_url.rstrip("/")
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(
            timeout=timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def health(self) -> bool:
        try:
            response = self._client.get(f"{self.service_url}/health")
        except httpx.HTTPError:
            return False
        return response.status_code == 200

    def score(self, batch: ScoreRequestBatch) -> list[float]:
        payload = {"reference": batch.reference, "candidates": list(batch.candidates)}
        with self._gate:
            try:
                response = self._client.post(f"{self.service_url}/v1/score", json=payload)
            except httpx.HTTPError as exc:
                raise ScorerUnreachable(f"scorer service unreachable: {exc}") from exc
        if response.status_code >= 500:
            raise ScorerUnreachable(f"scorer service error: HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ScorerProtocolError(
                f"scorer rejected request: HTTP {response.status_code} {response.text[:200]}"
            )
        try:
            body = response.json()
            scores = body["scores"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ScorerProtocolError(f"malformed scorer reply: {exc}") from exc
        if not isinstance(scores, list) or len(scores) != len(batch.candidates):
            raise ScorerProtocolError(
                f"expected {len(batch.candidates)} scores, got "
                f"{len(scores) if isinstance(scores, list) else type(scores).__name__}"
            )
        if not all(isinstance(s, (int, float)) for s in scores):
            raise ScorerProtocolError("non-numeric score in reply")
        # clamp, never rescale: keeps cross-run comparability
        return [min(1.0, max(0.0, float(s))) for s in scores]


def embed_score(
    batch: ScoreRequestBatch,
    scorer: Scorer,
    client: EmbedClient | None = None,
) -> list[float]:
    """Score a batch via the remote embedding service, order-preserving."""
    if scorer.id != "embed":
        raise ValueError(f"embed_score needs an embed scorer, got {scorer.id!r}")
    own_client = client is None
    if client is None:
        client = EmbedClient(
            scorer.config["service_url"],
            timeout_ms=int(scorer.config.get("timeout_ms", 10_000)),
        )
    try:
        return client.score(batch)
    finally:
        if own_client:
            client.close()


# ---------------------------------------------------------------------------
# Candidate scoring
# ---------------------------------------------------------------------------


def candidate_text(entity: Entity) -> str:
    """Candidate-side text: description plus serialized attributes."""
    attr_text = "; ".join(f"{k}: {v}" for k, v in entity.attributes)
    return " ".join(part for part in (entity.description.strip(), attr_text) if part)


def score_candidates(
    mention_desc: str,
    entities: list[Entity],
    scorer: Scorer,
    client: EmbedClient | None = None,
) -> list[Candidate]:
    """Score each entity against the fused mention description.

    Output order matches the input order; sorting is the adapter's job.
    Entities whose candidate text is empty score 0 without touching the
    scorer.
    """
    if not mention_desc.strip():
        raise EmptyText("mention description is empty")

    texts = [candidate_text(e) for e in entities]

    if scorer.id == "bleu":
        if not tokenize(mention_desc):
            raise EmptyText("mention description tokenized to zero tokens")
        max_ngram = int(scorer.config.get("max_ngram", 4))
        smoothing = scorer.config.get("smoothing", "add-one")
        direction = scorer.config.get("direction", DIRECTION_REF_IS_MENTION)
        scores = []
        for text in texts:
            if not text or not tokenize(text):
                scores.append(0.0)
            elif direction == DIRECTION_REF_IS_CANDIDATE:
                scores.append(bleu(text, mention_desc, max_ngram, smoothing))
            else:
                scores.append(bleu(mention_desc, text, max_ngram, smoothing))
    elif scorer.id == "embed":
        scores = [0.0] * len(entities)
        live = [(i, t) for i, t in enumerate(texts) if t]
        if live:
            batch = ScoreRequestBatch(mention_desc, tuple(t for _, t in live))
            for (i, _), s in zip(live, embed_score(batch, scorer, client)):
                scores[i] = s
    else:  # pragma: no cover - Scorer constructor rejects other ids
        raise ValueError(f"unknown scorer id: {scorer.id!r}")

    return [
        Candidate(entity=e, score=s, scorer_id=scorer.id)
        for e, s in zip(entities, scores)
    ]
