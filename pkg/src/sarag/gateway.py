"""Single boundary for model calls: completion, embedding, JSON parsing, retries.

Every pipeline stage talks to models through `Gateway`.  Providers receive
the full `CompletionRequest` (template id + bindings + rendered prompt) so
deterministic providers can key on structured inputs instead of raw text.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol

import numpy as np

from . import prompts

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """A provider could not be reached or timed out; retried by the gateway."""


class AuthError(GatewayError):
    """Credentials rejected by the provider; never retried."""


class PayloadError(GatewayError):
    """Model output contained no parseable JSON value."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    template_id: str | None = None
    bindings: Mapping[str, str] = field(default_factory=dict)


class CompletionProvider(Protocol):
    name: str
    live: bool

    def complete(self, request: CompletionRequest) -> str: ...


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> "EmbeddingVector": ...


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length vector; unit L2 norm when `normalized` (zero vector only
    for the documented empty-text case)."""

    values: np.ndarray
    normalized: bool = True

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.values]


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; zero vectors score 0 against everything."""
    if a.dim != b.dim:
        raise GatewayError(f"embedding dim mismatch: {a.dim} vs {b.dim}")
    if a.is_zero() or b.is_zero():
        return 0.0
    va, vb = a.values, b.values
    if not a.normalized:
        va = va / np.linalg.norm(va)
    if not b.normalized:
        vb = vb / np.linalg.norm(vb)
    return float(np.dot(va, vb))


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_json_payload(text: str) -> tuple[Any, bool]:
    """Extract the first well-formed JSON value from model output.

    Returns `(value, repaired)` where `repaired` is True when code fences
    or leading prose had to be stripped.  Raises `PayloadError` when no
    JSON value can be found.
    """
    try:
        return json.loads(text), False
    except (json.JSONDecodeError, TypeError):
        pass

    fenced = _FENCE_RE.search(text or "")
    if fenced:
        try:
            return json.loads(fenced.group(1)), True
        except json.JSONDecodeError:
            pass

    decoder = json.JSONDecoder()
    for i, ch in enumerate(text or ""):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text, i)
                return value, True
            except json.JSONDecodeError:
                continue
    raise PayloadError("no parseable JSON found in model output")


class TokenBucket:
    """Simple QPS limiter for live providers; thread-safe."""

    def __init__(self, qps: float, *, clock=time.monotonic, sleep=time.sleep):
        if qps <= 0:
            raise ValueError("qps must be positive")
        self.capacity = max(1.0, qps)
        self.rate = qps
        self.tokens = self.capacity
        self.updated = clock()
        self._clock = clock
        self._sleep = sleep
        import threading

        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


class Gateway:
    """Completion/embedding front door with retries, rate limiting for live
    providers, and one JSON repair round."""

    def __init__(
        self,
        provider: CompletionProvider,
        embedder: EmbeddingProvider,
        *,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        repair_rounds: int = 1,
        rate_limiter: "TokenBucket | None" = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.provider = provider
        self.embedder = embedder
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.repair_rounds = repair_rounds
        self.rate_limiter = rate_limiter

    def render_prompt(self, template_id: str, bindings: Mapping[str, str]) -> str:
        return prompts.render_prompt(template_id, dict(bindings))

    def complete(
        self,
        prompt: str,
        *,
        template_id: str | None = None,
        bindings: Mapping[str, str] | None = None,
    ) -> str:
        """Run one completion, retrying transport failures with backoff."""
        request = CompletionRequest(
            prompt=prompt, template_id=template_id, bindings=dict(bindings or {})
        )
        last_error: TransportError | None = None
        for attempt in range(self.max_attempts):
            if attempt and getattr(self.provider, "live", False):
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            if self.rate_limiter is not None and getattr(self.provider, "live", False):
                self.rate_limiter.acquire()
            try:
                return self.provider.complete(request)
            except TransportError as exc:
                last_error = exc
                log.warning(
                    "provider %s transport failure (attempt %d/%d): %s",
                    getattr(self.provider, "name", "?"),
                    attempt + 1,
                    self.max_attempts,
                    exc,
                )
        raise TransportError(
            f"provider failed after {self.max_attempts} attempts: {last_error}"
        ) from last_error

    def complete_template(self, template_id: str, bindings: Mapping[str, str]) -> str:
        prompt = self.render_prompt(template_id, bindings)
        return self.complete(prompt, template_id=template_id, bindings=bindings)

    def complete_json(self, template_id: str, bindings: Mapping[str, str]) -> tuple[Any, bool]:
        """Completion plus JSON extraction, with one re-prompt repair round."""
        text = self.complete_template(template_id, bindings)
        try:
            return parse_json_payload(text)
        except PayloadError as exc:
            if self.repair_rounds < 1:
                raise
            log.warning("unparseable %s output, re-prompting once: %s", template_id, exc)
        prompt = self.render_prompt(template_id, bindings)
        repair_prompt = (
            f"{prompt}\n\nYour previous output could not be parsed as JSON. "
            "Return valid JSON only, with no prose or code fences."
        )
        text = self.complete(repair_prompt, template_id=template_id, bindings=bindings)
        value, _ = parse_json_payload(text)
        return value, True

    def embed(self, text: str) -> EmbeddingVector:
        return self.embedder.embed(text)
