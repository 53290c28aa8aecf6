"""Pipeline configuration with strict validation.

Precedence: built-in defaults < config file (JSON) < environment < explicit
overrides (CLI flags / request fields).  Unknown keys are rejected.  The
API key is environment-only (`SARAG_API_KEY`) and never hashed into the
config fingerprint.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .textutil import stable_digest

ENV_API_KEY = "SARAG_API_KEY"
ENV_PROVIDER = "SARAG_PROVIDER"

ABLATIONS = ("no_metadata", "no_validation")


class ConfigError(ValueError):
    pass


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    provider: str = "mock"
    provider_endpoint: str | None = None
    model: str | None = None
    mock_fixtures_path: str | None = None
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    max_tokens: int = Field(default=2048, ge=1)
    max_attempts: int = Field(default=3, ge=1, le=10)
    backoff_s: float = Field(default=0.5, ge=0.0)
    live_qps: float | None = Field(default=None, gt=0.0)

    capacity: int = Field(default=20, ge=1, le=200)
    top_k: int = Field(default=3, ge=1, le=100)
    row_weight: float = Field(default=1.0, ge=0.0, le=100.0)
    max_depth: int = Field(default=3, ge=0, le=20)
    evidence_budget: int = Field(default=10, ge=0, le=1000)
    drop_rate: float = Field(default=0.3, ge=0.0, le=1.0)
    noise_rate: float = Field(default=0.3, ge=0.0, le=1.0)
    swap_pairs: int = Field(default=1, ge=1, le=50)
    seed: int = Field(default=0, ge=-(2**63), le=2**63 - 1)
    embed_dim: int = Field(default=256, ge=8, le=65536)
    token_budget: int = Field(default=3000, ge=16)
    jobs: int = Field(default=1, ge=1, le=64)
    positives_path: str | None = None
    ablations: set[Literal["no_metadata", "no_validation"]] = Field(default_factory=set)

    @field_validator("provider")
    @classmethod
    def _check_provider(cls, value: str) -> str:
        base = value.split(":", 1)[0]
        if base not in ("mock", "file", "openai"):
            raise ValueError(f"unknown provider {value!r}; expected mock, file:<path>, or openai")
        return value

    def fingerprint(self) -> str:
        payload = self.model_dump(mode="json")
        payload["ablations"] = sorted(payload.get("ablations", []))
        return stable_digest(payload)

    def with_overrides(self, overrides: dict[str, Any]) -> "PipelineConfig":
        merged = self.model_dump()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in merged:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        try:
            return PipelineConfig(**merged)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(
    config_path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    env: dict[str, str] | None = None,
) -> PipelineConfig:
    """Assemble the effective config from defaults, file, env, and overrides."""
    env = os.environ if env is None else env
    payload: dict[str, Any] = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    try:
        config = PipelineConfig(**payload)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigError(str(exc)) from exc

    if env.get(ENV_PROVIDER):
        config = config.with_overrides({"provider": env[ENV_PROVIDER]})
    if overrides:
        config = config.with_overrides(overrides)
    return config


def api_key(env: dict[str, str] | None = None) -> str | None:
    env = os.environ if env is None else env
    return env.get(ENV_API_KEY)
