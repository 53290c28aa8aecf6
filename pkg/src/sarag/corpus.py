"""Loading and validation of multi-turn support dialogues.

A corpus file is JSONL with one conversation per line:

    {"id": "c01", "source": "forum", "turns": [{"role": "user", "text": "..."}]}

A `json_array` variant holding the same records in one top-level list is
also accepted.  Unknown speaker roles are tolerated and mapped to `other`;
everything else is validated strictly at load time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

log = logging.getLogger(__name__)

CORPUS_FORMATS = ("jsonl", "json_array")


class CorpusError(ValueError):
    """Raised when a corpus file cannot be parsed or validated."""


class SpeakerRole(str, Enum):
    USER = "user"
    AGENT = "agent"
    OTHER = "other"

    @classmethod
    def coerce(cls, raw: Any) -> "SpeakerRole":
        """Map arbitrary role tags onto the three supported roles."""
        if isinstance(raw, str):
            try:
                return cls(raw.strip().lower())
            except ValueError:
                pass
        return cls.OTHER


@dataclass(frozen=True)
class Turn:
    role: SpeakerRole
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError("turn text must be non-empty")


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("conversation id must be non-empty")
        if not self.turns:
            raise CorpusError(f"conversation {self.id!r} has no turns")

    def text(self) -> str:
        """All turns joined with role prefixes; the prompt/embedding rendering."""
        return "\n".join(f"{t.role.value}: {t.text}" for t in self.turns)

    def first_user_text(self) -> str:
        for turn in self.turns:
            if turn.role is SpeakerRole.USER:
                return turn.text
        return self.turns[0].text

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "turns": [{"role": t.role.value, "text": t.text} for t in self.turns],
        }


def conversation_from_dict(record: Any, where: str) -> Conversation:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: expected an object, got {type(record).__name__}")
    conv_id = record.get("id")
    if not isinstance(conv_id, str) or not conv_id:
        raise CorpusError(f"{where}: missing or empty 'id'")
    raw_turns = record.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise CorpusError(f"{where}: conversation {conv_id!r} has no turns")
    turns = []
    for i, raw in enumerate(raw_turns):
        if not isinstance(raw, dict) or not isinstance(raw.get("text"), str):
            raise CorpusError(f"{where}: conversation {conv_id!r} turn {i} is malformed")
        try:
            turns.append(Turn(role=SpeakerRole.coerce(raw.get("role")), text=raw["text"]))
        except CorpusError as exc:
            raise CorpusError(f"{where}: conversation {conv_id!r} turn {i}: {exc}") from exc
    source = record.get("source", "")
    if not isinstance(source, str):
        source = str(source)
    return Conversation(id=conv_id, turns=tuple(turns), source=source)


def _iter_records(path: Path, fmt: str) -> Iterable[tuple[str, Any]]:
    text = path.read_text(encoding="utf-8")
    if fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                yield f"{path.name} line {lineno}", json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name} line {lineno}: invalid JSON ({exc.msg})") from exc
    else:
        try:
            payload = json.loads(text) if text.strip() else []
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path.name}: invalid JSON ({exc.msg})") from exc
        if not isinstance(payload, list):
            raise CorpusError(f"{path.name}: expected a top-level array")
        for i, record in enumerate(payload):
            yield f"{path.name} record {i}", record


def load_corpus(path: str | Path, fmt: str = "jsonl") -> list[Conversation]:
    """Load and validate a conversation corpus, preserving file order."""
    if fmt not in CORPUS_FORMATS:
        raise CorpusError(f"unknown corpus format {fmt!r}; expected one of {CORPUS_FORMATS}")
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")

    conversations: list[Conversation] = []
    seen: set[str] = set()
    for where, record in _iter_records(path, fmt):
        conv = conversation_from_dict(record, where)
        if conv.id in seen:
            raise CorpusError(f"{where}: duplicate conversation id {conv.id!r}")
        seen.add(conv.id)
        conversations.append(conv)

    if not conversations:
        raise CorpusError(f"empty corpus: {path}")
    log.debug("loaded %d conversations from %s", len(conversations), path)
    return conversations


def save_corpus_jsonl(conversations: list[Conversation]) -> str:
    """Serialize conversations back to the JSONL wire format."""
    lines = [json.dumps(c.to_dict(), ensure_ascii=False) for c in conversations]
    return "\n".join(lines) + "\n"
