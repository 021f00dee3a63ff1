"""Uniform gateway to text-generation (LLM) and vision-QA (LVM) backends.

Ships a live OpenAI-compatible HTTP backend plus deterministic scripted
backends for tests and offline runs. Every request flows through
:func:`generate`, which enforces the input-token cap and the retry policy.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .errors import BackendRefused, BackendUnreachable, ImageMissing

log = logging.getLogger(__name__)

ENV_API_BASE = "MELO_API_BASE"
ENV_API_KEY = "MELO_API_KEY"

DEFAULT_TEMPERATURE = 0.75
DEFAULT_MAX_INPUT_TOKENS = 512

# patchable in tests so the retry backoff does not slow the suite
_sleep = time.sleep
RETRY_BACKOFF_S = 1.0


class Role(str, Enum):
    SUMMARIZER = "summarizer"
    VISION_QA = "vision_qa"
    JUDGE = "judge"
    CLOZER = "clozer"


@dataclass(frozen=True)
class GenerationParams:
    """Decoding and input-budget parameters for one agent call."""

    model_id: str = "default"
    temperature: float = DEFAULT_TEMPERATURE
    max_input_tokens: int = DEFAULT_MAX_INPUT_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature outside [0,2]: {self.temperature}")
        if self.max_input_tokens < 1:
            raise ValueError(f"max_input_tokens must be >= 1: {self.max_input_tokens}")


@dataclass(frozen=True)
class AgentRequest:
    """Envelope between a pipeline stage and a model backend.

    Invariant (checked by :func:`generate`): an image is attached exactly
    when the role is VISION_QA.
    """

    role: Role
    prompt: str
    params: GenerationParams = field(default_factory=GenerationParams)
    image: str | None = None


@dataclass(frozen=True)
class AgentReply:
    text: str
    model_id: str
    latency_ms: int = 0
    truncated: bool = False


def approximate_token_count(text: str) -> int:
    """Deterministic token-count proxy: ceil(whitespace words x 4/3)."""
    return math.ceil(len(text.split()) * 4 / 3)


def truncate_to_budget(prompt: str, max_input_tokens: int) -> tuple[str, bool]:
    """Drop words tail-first until the approximate count fits the budget.

    Idempotent: a prompt that already fits is returned unchanged, and a
    truncated prompt re-truncates to itself.
    """
    if approximate_token_count(prompt) <= max_input_tokens:
        return prompt, False
    keep = (3 * max_input_tokens) // 4
    return " ".join(prompt.split()[:keep]), True


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend(Protocol):
    """Minimal backend surface: turn a request into reply text."""

    def complete(self, request: AgentRequest) -> str: ...


def generate(request: AgentRequest, backend: Backend) -> AgentReply:
    """Run one agent call: validate, truncate to budget, time, retry once.

    Raises ImageMissing for a VISION_QA request without an image (and
    ValueError for an image on any other role), BackendUnreachable after the
    single retry fails, BackendRefused on HTTP error statuses.
    """
    if not request.prompt.strip():
        raise ValueError("prompt must be non-empty")
    if request.role is Role.VISION_QA and request.image is None:
        raise ImageMissing("vision request carries no image")
    if request.role is not Role.VISION_QA and request.image is not None:
        raise ValueError(f"image attached to non-vision role {request.role.value}")

    prompt, truncated = truncate_to_budget(request.prompt, request.params.max_input_tokens)
    if truncated:
        request = AgentRequest(
            role=request.role, prompt=prompt, params=request.params, image=request.image
        )

    started = time.perf_counter()
    try:
        text = backend.complete(request)
    except BackendUnreachable as exc:
        log.warning("backend unreachable, retrying once: %s", exc)
        _sleep(RETRY_BACKOFF_S)
        text = backend.complete(request)
    latency_ms = int((time.perf_counter() - started) * 1000)
    return AgentReply(
        text=text,
        model_id=request.params.model_id,
        latency_ms=latency_ms,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Scripted backends (deterministic, offline)
# ---------------------------------------------------------------------------

Matcher = "str | Callable[[str], bool]"
Replier = "str | Callable[[str], str]"


class ScriptedBackend:
    """Deterministic backend for tests: rules, per-role queues, digest default.

    Resolution order per call: first matching rule (insertion order), then
    the role's reply queue, then the default reply, which is a pure function
    of (role, prompt hash, seed) and therefore byte-stable across runs and
    platforms.
    """

    def __init__(self, seed: int | None = None) -> None:
        self.seed = seed
        self._rules: list[tuple[Role, Any, Any]] = []
        self._queues: dict[Role, list[str]] = {}
        self.calls: list[tuple[Role, str]] = []

    def add_rule(self, role: Role, match: Any, reply: Any) -> "ScriptedBackend":
        """Register a rule; ``match`` is a substring or a prompt predicate."""
        self._rules.append((role, match, reply))
        return self

    def add_hash_rule(self, role: Role, digest: str, reply: str) -> "ScriptedBackend":
        """Match a prompt by its exact sha256 hex digest."""
        return self.add_rule(role, lambda p, d=digest: prompt_hash(p) == d, reply)

    def push(self, role: Role, *replies: str) -> "ScriptedBackend":
        """Queue replies consumed one per call for the given role."""
        self._queues.setdefault(role, []).extend(replies)
        return self

    def calls_for(self, role: Role) -> int:
        return sum(1 for r, _ in self.calls if r is role)

    def default_reply(self, role: Role, prompt: str) -> str:
        tag = f":{self.seed}" if self.seed is not None else ""
        return f"scripted:{role.value}:{prompt_hash(prompt)[:12]}{tag}"

    def complete(self, request: AgentRequest) -> str:
        self.calls.append((request.role, request.prompt))
        for role, match, reply in self._rules:
            if role is not request.role:
                continue
            hit = match(request.prompt) if callable(match) else match in request.prompt
            if hit:
                return reply(request.prompt) if callable(reply) else reply
        queue = self._queues.get(request.role)
        if queue:
            return queue.pop(0)
        return self.default_reply(request.role, request.prompt)


class EchoBackend:
    """Offline backend that derives sensible replies from the prompt itself.

    Summarizer echoes the leading words of the prompt's final CONTEXT block;
    VisionQA echoes the quoted entity hint; Judge and Clozer return fixed,
    configurable answers. Pure function of the prompt, so offline eval runs
    are reproducible.
    """

    def __init__(
        self,
        judge_answer: str = "yes",
        cloze_answer: str = "option 1",
        summary_words: int = 30,
    ) -> None:
        self.judge_answer = judge_answer
        self.cloze_answer = cloze_answer
        self.summary_words = summary_words
        self.calls: list[tuple[Role, str]] = []

    def complete(self, request: AgentRequest) -> str:
        self.calls.append((request.role, request.prompt))
        if request.role is Role.SUMMARIZER:
            _, _, tail = request.prompt.rpartition("CONTEXT:")
            text = tail.split("SUMMARY:")[0].strip() or request.prompt
            words = text.split()[: self.summary_words]
            return "SUMMARY: " + " ".join(words)
        if request.role is Role.VISION_QA:
            hint = _quoted_fragment(request.prompt)
            return f"{hint} is shown in the image." if hint else "An object is shown."
        if request.role is Role.JUDGE:
            return self.judge_answer
        return self.cloze_answer


def _quoted_fragment(prompt: str) -> str | None:
    start = prompt.find('"')
    if start < 0:
        return None
    end = prompt.find('"', start + 1)
    if end < 0:
        return None
    return prompt[start + 1 : end]


# ---------------------------------------------------------------------------
# Live HTTP backend (OpenAI-compatible chat completions)
# ---------------------------------------------------------------------------

_IMAGE_MIME = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


def _image_part(image: str) -> dict[str, Any]:
    if image.startswith(("http://", "https://", "data:")):
        url = image
    else:
        path = Path(image)
        if not path.is_file():
            raise ImageMissing(f"image file not found: {image}")
        mime = _IMAGE_MIME.get(path.suffix.lower(), "image/png")
        encoded = base64.b64encode(path.read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{encoded}"
    return {"type": "image_url", "image_url": {"url": url}}


class HttpBackend:
    """Backend speaking the de-facto chat-completion HTTP shape.

    POST {base}/chat/completions with a JSON messages list; vision requests
    attach the image as a base64 data URL part. A configurable cap bounds
    in-flight requests (default 4).
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        concurrency: int = 4,
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self._headers = {"Content-Type": "application/json"}
        if api_key:
            self._headers["Authorization"] = f"Bearer {api_key}"
        self._gate = threading.BoundedSemaphore(concurrency)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: AgentRequest) -> str:
        if request.image is not None:
            content: Any = [_image_part(request.image),
                            {"type": "text", "text": request.prompt}]
        else:
            content = request.prompt
        payload: dict[str, Any] = {
            "model": request.params.model_id,
            "temperature": request.params.temperature,
            "messages": [{"role": "user", "content": content}],
        }
        if request.params.seed is not None:
            payload["seed"] = request.params.seed

        with self._gate:
            try:
                response = self._client.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=self._headers,
                )
            except httpx.HTTPError as exc:
                raise BackendUnreachable(str(exc)) from exc
        if response.status_code >= 400:
            raise BackendRefused(response.status_code, response.text[:200])
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendRefused(response.status_code, f"malformed body: {exc}") from exc


# ---------------------------------------------------------------------------
# Role -> backend routing
# ---------------------------------------------------------------------------


class BackendPool:
    """Routes each agent role to a backend; one shared default is typical."""

    def __init__(
        self,
        default: Backend,
        overrides: dict[Role, Backend] | None = None,
    ) -> None:
        self.default = default
        self.overrides = dict(overrides or {})

    def for_role(self, role: Role) -> Backend:
        return self.overrides.get(role, self.default)
