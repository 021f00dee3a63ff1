"""Domain types shared by every pipeline stage.

All types are immutable values after construction: safe to share across
concurrent workers. Each one serializes to plain dicts / canonical JSON and
round-trips byte-identically (``encode(decode(encode(x))) == encode(x)``).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator

from .errors import EmptyMention, MalformedQid

log = logging.getLogger(__name__)

QID_PATTERN = re.compile(r"Q[0-9]+")


def is_valid_qid(value: object) -> bool:
    return isinstance(value, str) and QID_PATTERN.fullmatch(value) is not None


def qid_sort_key(qid: str) -> int:
    """Ascending-qid tie-break order: numeric value of the digits (Q10 < Q42 < Q312)."""
    return int(qid[1:])


def canonical_json(data: Any) -> str:
    """Stable JSON encoding: sorted keys, no insignificant whitespace."""
    return json.dumps(data, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Mention
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Mention:
    """The thing to link: surface words, context, optional image, fused description.

    ``summary``, ``image_description`` and ``fused_description`` start out
    empty and are attached by the fusion stage via the ``with_*`` helpers;
    ``fused_description`` is present exactly when fusion has run.
    """

    id: str
    words: str
    context: str = ""
    summary: str | None = None
    image: str | None = None
    image_description: str | None = None
    fused_description: str | None = None

    def __post_init__(self) -> None:
        if not self.words.strip():
            raise EmptyMention("words")

    def with_summary(self, summary: str) -> "Mention":
        return replace(self, summary=summary)

    def with_image_description(self, description: str) -> "Mention":
        return replace(self, image_description=description)

    def with_fused_description(self, fused: str) -> "Mention":
        return replace(self, fused_description=fused)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "words": self.words,
            "context": self.context,
            "summary": self.summary,
            "image": self.image,
            "image_description": self.image_description,
            "fused_description": self.fused_description,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Mention":
        return cls(
            id=data["id"],
            words=data["words"],
            context=data.get("context", ""),
            summary=data.get("summary"),
            image=data.get("image"),
            image_description=data.get("image_description"),
            fused_description=data.get("fused_description"),
        )


# ---------------------------------------------------------------------------
# Entity / Candidate / CandidateSet
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class Entity:
    """A knowledge-graph record: Qid, name, description, attributes, image refs.

    The Qid is the sole identity: two Entity values compare equal iff their
    qids are equal, regardless of description drift between fetches.
    """

    qid: str
    name: str
    description: str = ""
    attributes: tuple[tuple[str, str], ...] = ()
    images: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not is_valid_qid(self.qid):
            raise MalformedQid(self.qid)
        keys = [k for k, _ in self.attributes]
        if len(keys) != len(set(keys)):
            raise ValueError(f"duplicate attribute keys on {self.qid}: {keys}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Entity):
            return NotImplemented
        return self.qid == other.qid

    def __hash__(self) -> int:
        return hash(self.qid)

    def to_dict(self) -> dict[str, Any]:
        return {
            "qid": self.qid,
            "name": self.name,
            "description": self.description,
            "attributes": [[k, v] for k, v in self.attributes],
            "images": list(self.images),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Entity":
        return cls(
            qid=data["qid"],
            name=data["name"],
            description=data.get("description", ""),
            attributes=tuple((k, v) for k, v in data.get("attributes", [])),
            images=tuple(data.get("images", [])),
        )


@dataclass(frozen=True, slots=True)
class Candidate:
    """An entity paired with its similarity score against the fused description."""

    entity: Entity
    score: float
    scorer_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score outside [0,1]: {self.score}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity.to_dict(),
            "score": self.score,
            "scorer_id": self.scorer_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Candidate":
        return cls(
            entity=Entity.from_dict(data["entity"]),
            score=data["score"],
            scorer_id=data["scorer_id"],
        )


def candidate_order_key(candidate: Candidate) -> tuple[float, int]:
    """Total order over candidates: score descending, then qid ascending."""
    return (-candidate.score, qid_sort_key(candidate.entity.qid))


@dataclass(frozen=True, slots=True)
class CandidateSet:
    """An ordered, truncated candidate list for one mention and one round.

    Candidates are sorted by score descending with ties broken by ascending
    qid; the constructor rejects anything else. Size capping to the
    configured top-k is the adapter's job.
    """

    mention_id: str
    candidates: tuple[Candidate, ...]
    round: int = 1

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        keys = [candidate_order_key(c) for c in self.candidates]
        if keys != sorted(keys):
            raise ValueError("candidates not in (score desc, qid asc) order")
        qids = [c.entity.qid for c in self.candidates]
        if len(qids) != len(set(qids)):
            raise ValueError(f"duplicate qids in candidate set: {qids}")

    @classmethod
    def from_unsorted(
        cls,
        mention_id: str,
        candidates: list[Candidate] | tuple[Candidate, ...],
        round: int = 1,
        top_k: int | None = None,
    ) -> "CandidateSet":
        """Sort (stably) by the total order, drop duplicate qids, truncate to top_k."""
        seen: set[str] = set()
        unique = []
        for c in candidates:
            if c.entity.qid not in seen:
                seen.add(c.entity.qid)
                unique.append(c)
        ordered = sorted(unique, key=candidate_order_key)
        if top_k is not None:
            ordered = ordered[:top_k]
        return cls(mention_id=mention_id, candidates=tuple(ordered), round=round)

    def qids(self) -> tuple[str, ...]:
        return tuple(c.entity.qid for c in self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mention_id": self.mention_id,
            "candidates": [c.to_dict() for c in self.candidates],
            "round": self.round,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CandidateSet":
        return cls(
            mention_id=data["mention_id"],
            candidates=tuple(Candidate.from_dict(c) for c in data["candidates"]),
            round=data["round"],
        )


# ---------------------------------------------------------------------------
# Feedback bundle (issued by the adapter, consumed by the fuser)
# ---------------------------------------------------------------------------

MAX_NEGATIVE_EXAMPLES = 3


@dataclass(frozen=True, slots=True)
class FeedbackBundle:
    """Structured feedback after an Absent verdict: summary, conflict, negatives."""

    context_summary: str
    conflict_analysis: str
    negative_examples: tuple[Entity, ...] = ()

    def __post_init__(self) -> None:
        if len(self.negative_examples) > MAX_NEGATIVE_EXAMPLES:
            raise ValueError(
                f"at most {MAX_NEGATIVE_EXAMPLES} negative examples, "
                f"got {len(self.negative_examples)}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "context_summary": self.context_summary,
            "conflict_analysis": self.conflict_analysis,
            "negative_examples": [e.to_dict() for e in self.negative_examples],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FeedbackBundle":
        return cls(
            context_summary=data["context_summary"],
            conflict_analysis=data["conflict_analysis"],
            negative_examples=tuple(
                Entity.from_dict(e) for e in data.get("negative_examples", [])
            ),
        )


# ---------------------------------------------------------------------------
# Link outcome / trace
# ---------------------------------------------------------------------------

VERDICT_PRESENT = "present"
VERDICT_ABSENT = "absent"
VERDICT_PENDING = "pending"
VERDICT_ERROR = "error"


@dataclass(frozen=True, slots=True)
class LinkOutcome:
    """Tagged union: either ``Linked(qid)`` or ``MatchingFailed``."""

    kind: str
    qid: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "linked":
            if not is_valid_qid(self.qid):
                raise MalformedQid(self.qid, field="outcome.qid")
        elif self.kind == "matching_failed":
            if self.qid is not None:
                raise ValueError("matching_failed outcome carries no qid")
        else:
            raise ValueError(f"unknown outcome kind: {self.kind!r}")

    @classmethod
    def linked(cls, qid: str) -> "LinkOutcome":
        return cls(kind="linked", qid=qid)

    @classmethod
    def matching_failed(cls) -> "LinkOutcome":
        return cls(kind="matching_failed")

    @property
    def is_linked(self) -> bool:
        return self.kind == "linked"

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "linked":
            return {"kind": "linked", "qid": self.qid}
        return {"kind": "matching_failed"}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LinkOutcome":
        return cls(kind=data["kind"], qid=data.get("qid"))


@dataclass(frozen=True, slots=True)
class RoundTrace:
    """One adaptive-loop round: candidate set, judge verdict, feedback issued."""

    round: int
    candidate_set: CandidateSet | None
    verdict: str
    feedback: FeedbackBundle | None = None
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "candidate_set": self.candidate_set.to_dict() if self.candidate_set else None,
            "verdict": self.verdict,
            "feedback": self.feedback.to_dict() if self.feedback else None,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RoundTrace":
        cs = data.get("candidate_set")
        fb = data.get("feedback")
        return cls(
            round=data["round"],
            candidate_set=CandidateSet.from_dict(cs) if cs else None,
            verdict=data["verdict"],
            feedback=FeedbackBundle.from_dict(fb) if fb else None,
            note=data.get("note", ""),
        )


@dataclass(frozen=True, slots=True)
class LinkResult:
    """Per-mention outcome: chosen Qid or matching-failed, plus the round trace.

    ``fallback`` is set when the clozer fell back to the top-scored candidate
    after repeated parse failures. ``stage_log`` records pipeline stage order
    (summary, vision, fuse, round N, cloze) for auditing.
    """

    mention_id: str
    outcome: LinkOutcome
    rounds_used: int
    trace: tuple[RoundTrace, ...] = ()
    fallback: bool = False
    stage_log: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.rounds_used < 1:
            raise ValueError(f"rounds_used must be >= 1, got {self.rounds_used}")
        if self.trace and self.trace[-1].round != self.rounds_used:
            raise ValueError(
                f"rounds_used={self.rounds_used} disagrees with final trace "
                f"round {self.trace[-1].round}"
            )
        if self.outcome.is_linked and self.trace:
            final = self.trace[-1].candidate_set
            if final is not None and self.outcome.qid not in final.qids():
                raise ValueError(
                    f"linked qid {self.outcome.qid} absent from final candidate set"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "mention_id": self.mention_id,
            "outcome": self.outcome.to_dict(),
            "rounds_used": self.rounds_used,
            "trace": [t.to_dict() for t in self.trace],
            "fallback": self.fallback,
            "stage_log": list(self.stage_log),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LinkResult":
        return cls(
            mention_id=data["mention_id"],
            outcome=LinkOutcome.from_dict(data["outcome"]),
            rounds_used=data["rounds_used"],
            trace=tuple(RoundTrace.from_dict(t) for t in data.get("trace", [])),
            fallback=data.get("fallback", False),
            stage_log=tuple(data.get("stage_log", [])),
        )


# ---------------------------------------------------------------------------
# Dataset records
# ---------------------------------------------------------------------------

DATASET_FIELDS = frozenset(
    {"id", "mention_words", "context", "image", "image_description", "gold_qid"}
)


@dataclass(frozen=True, slots=True)
class DatasetRecord:
    """One evaluation instance: mention surface, context, optional visuals, gold Qid.

    ``image_description`` carries a precomputed caption so datasets that ship
    captions run fully offline without a vision model.
    """

    id: str
    mention_words: str
    context: str
    gold_qid: str
    image: str | None = None
    image_description: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "mention_words": self.mention_words,
            "context": self.context,
            "gold_qid": self.gold_qid,
            "image": self.image,
            "image_description": self.image_description,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], strict_fields: bool = True) -> "DatasetRecord":
        if strict_fields:
            unknown = set(data) - DATASET_FIELDS
            if unknown:
                log.warning("ignoring unknown dataset fields: %s", sorted(unknown))
        return cls(
            id=str(data["id"]),
            mention_words=data["mention_words"],
            context=data.get("context", ""),
            gold_qid=data["gold_qid"],
            image=data.get("image"),
            image_description=data.get("image_description"),
        )

    def to_mention(self) -> Mention:
        return Mention(
            id=self.id,
            words=self.mention_words,
            context=self.context,
            image=self.image,
            image_description=self.image_description,
        )


def validate_record(record: DatasetRecord) -> DatasetRecord:
    """Return the record unchanged if all invariants hold.

    Raises EmptyMention when the surface form is blank and MalformedQid when
    the gold Qid does not match ``Q[0-9]+``.
    """
    if not record.mention_words.strip():
        raise EmptyMention("mention_words")
    if not is_valid_qid(record.gold_qid):
        raise MalformedQid(record.gold_qid, field="gold_qid")
    return record


# ---------------------------------------------------------------------------
# JSON-Lines helpers
# ---------------------------------------------------------------------------


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (1-based line number, parsed object) for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield line_no, json.loads(line)


def write_jsonl(path: str | Path, rows: list[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")
