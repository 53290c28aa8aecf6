"""Provider wiring: build gateways from a pipeline config.

The `openai` provider targets any chat-completions-compatible endpoint and
is only exercised against live credentials; offline runs use the mock or a
file-backed export.
"""

from __future__ import annotations

import logging
from pathlib import Path

import httpx

from .config import PipelineConfig, api_key
from .gateway import AuthError, CompletionRequest, Gateway, TokenBucket, TransportError
from .mocks import FileCompletionProvider, MockCompletionProvider, MockEmbedder

log = logging.getLogger(__name__)


class HttpCompletionProvider:
    """Minimal chat-completions client; retries live at the gateway layer."""

    name = "openai"
    live = True

    def __init__(
        self,
        endpoint: str,
        model: str,
        key: str | None,
        *,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        timeout_s: float = 60.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.key = key
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout_s = timeout_s

    def complete(self, request: CompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        try:
            response = httpx.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout_s,
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"completion request failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"provider auth failure: HTTP {response.status_code}")
        if response.status_code >= 400:
            raise TransportError(f"provider error: HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc


def build_gateway(config: PipelineConfig) -> Gateway:
    """Construct the gateway named by `config.provider`.

    `mock` is fully offline; `file:<descriptor.json>` serves completions
    exported by an external generator; `openai` talks to a live endpoint.
    """
    embedder = MockEmbedder(dim=config.embed_dim)
    provider_spec = config.provider

    if provider_spec == "mock":
        if config.mock_fixtures_path:
            provider = MockCompletionProvider.from_file(config.mock_fixtures_path)
        else:
            provider = MockCompletionProvider()
    elif provider_spec.startswith("file:"):
        descriptor_path = Path(provider_spec.split(":", 1)[1])
        provider = FileCompletionProvider.from_file(descriptor_path)
    elif provider_spec == "openai":
        if not config.provider_endpoint or not config.model:
            raise ValueError("openai provider needs provider_endpoint and model")
        provider = HttpCompletionProvider(
            config.provider_endpoint,
            config.model,
            api_key(),
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )
    else:
        raise ValueError(f"unknown provider {provider_spec!r}")

    return Gateway(
        provider,
        embedder,
        max_attempts=config.max_attempts,
        backoff_s=config.backoff_s,
        rate_limiter=TokenBucket(config.live_qps) if config.live_qps else None,
    )
