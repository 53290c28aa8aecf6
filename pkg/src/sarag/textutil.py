"""Small text helpers shared across modules: tokens, casing, hashing, rendering."""

from __future__ import annotations

import hashlib
import json
import re
from datetime import date, datetime
from typing import Any

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SNAKE_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_CAMEL_BOUNDARY_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.?!])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens in order of appearance."""
    return _TOKEN_RE.findall(text.lower())


def token_set(text: str) -> set[str]:
    return set(tokenize(text))


def jaccard(a: set[str], b: set[str]) -> float:
    """Jaccard overlap; 0.0 when either side is empty."""
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def is_snake_case(name: str) -> bool:
    return bool(_SNAKE_RE.match(name))


def to_snake_case(name: str) -> str:
    """Deterministic snake_case fallback: camel boundaries and separators to `_`."""
    name = _CAMEL_BOUNDARY_RE.sub("_", name)
    name = re.sub(r"[^a-zA-Z0-9]+", "_", name).lower().strip("_")
    name = re.sub(r"_+", "_", name)
    if not name:
        return "column"
    if not name[0].isalpha():
        return f"c_{name}"
    return name


def split_sentences(text: str) -> list[str]:
    """Split on ./?/! followed by whitespace; empty fragments dropped."""
    return [part.strip() for part in _SENTENCE_SPLIT_RE.split(text) if part.strip()]


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def stable_digest(payload: Any) -> str:
    """Hex sha256 of the canonical JSON form of `payload`."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def derive_seed(*parts: Any) -> int:
    """Fold parts into a reproducible non-negative 63-bit seed."""
    blob = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(blob.encode("utf-8")).digest()[:8], "big") >> 1


def value_to_string(value: Any) -> str:
    """Canonical string rendering for cell values (CSV, index, lookups)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, datetime):
        return value.strftime("%Y-%m-%dT%H:%M:%S")
    if isinstance(value, date):
        return value.strftime("%Y-%m-%d")
    if isinstance(value, float):
        return repr(value)
    return str(value)
