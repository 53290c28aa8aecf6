"""Preference-pair construction: seeded perturbations of positive rows.

Negatives stay schema-closed (same column set) but are corrupted by one of
four operators, or a combo of two to three applied sequentially:

  - drop: non-null cells independently nulled
  - hallucinate: non-null cells replaced by random dialogue words
  - swap: values exchanged between disjoint column pairs
  - dialogue: one cell overwritten with a random dialogue sentence

Every operator is a pure function of (row, parameters, rng); per-row rngs
are derived from the global seed and the conversation id, so parallel
generation order cannot change outputs.
"""

from __future__ import annotations

import csv
import io
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from .corpus import Conversation
from .tables import TableRow
from .textutil import derive_seed, split_sentences, value_to_string

log = logging.getLogger(__name__)

PERTURBATION_MODES = ("drop", "hallucinate", "swap", "dialogue", "combo")


class PrefError(ValueError):
    pass


@dataclass
class PreferencePair:
    conversation_id: str
    positive: TableRow
    negative: TableRow
    modes: list[str] = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "conversation_id": self.conversation_id,
            "positive": self.positive.to_dict(),
            "negative": self.negative.to_dict(),
            "modes": list(self.modes),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "PreferencePair":
        return cls(
            conversation_id=str(payload["conversation_id"]),
            positive=TableRow.from_dict(payload["positive"]),
            negative=TableRow.from_dict(payload["negative"]),
            modes=[str(m) for m in payload.get("modes", [])],
            seed=int(payload.get("seed", 0)),
        )


def _clone_row(row: TableRow) -> TableRow:
    return TableRow(
        conversation_id=row.conversation_id,
        metadata_version=row.metadata_version,
        cells={name: replace(cell) for name, cell in row.cells.items()},
    )


def rows_equal(a: TableRow, b: TableRow) -> bool:
    if set(a.cells) != set(b.cells):
        return False
    return all(a.cells[name].value == b.cells[name].value for name in a.cells)


def drop_random_values(row: TableRow, drop_rate: float, rng: random.Random) -> TableRow:
    """Null each non-null cell independently with probability `drop_rate`."""
    if not 0.0 <= drop_rate <= 1.0:
        raise PrefError(f"drop_rate must be in [0, 1], got {drop_rate}")
    out = _clone_row(row)
    for cell in out.cells.values():
        if cell.is_null():
            continue
        if rng.random() < drop_rate:
            cell.value = None
            cell.sem_ok = False
            cell.struct_ok = False
    return out


def random_hallucination(
    row: TableRow, noise_rate: float, conv: Conversation, rng: random.Random
) -> TableRow:
    """Replace non-null cells, each with probability `noise_rate`, by a word
    sampled uniformly from the dialogue; declared dtypes are violated on
    purpose (replacement values are plain strings)."""
    if not 0.0 <= noise_rate <= 1.0:
        raise PrefError(f"noise_rate must be in [0, 1], got {noise_rate}")
    vocabulary = [w for turn in conv.turns for w in turn.text.split()]
    if not vocabulary:
        raise PrefError(f"conversation {conv.id!r} has an empty vocabulary")
    out = _clone_row(row)
    for cell in out.cells.values():
        if cell.is_null():
            continue
        if rng.random() < noise_rate:
            cell.value = rng.choice(vocabulary)
            cell.sem_ok = True
            cell.struct_ok = True
    return out


def swap_fields(row: TableRow, n_pairs: int, rng: random.Random) -> TableRow:
    """Exchange values between `n_pairs` disjoint column pairs chosen
    uniformly; the multiset of cell values is preserved."""
    if n_pairs < 1:
        raise PrefError("n_pairs must be positive")
    columns = list(row.cells)
    if len(columns) < 2:
        raise PrefError("swap needs at least two columns")
    n_pairs = min(n_pairs, len(columns) // 2)
    chosen = rng.sample(columns, 2 * n_pairs)
    out = _clone_row(row)
    for i in range(0, len(chosen), 2):
        a, b = chosen[i], chosen[i + 1]
        out.cells[a].value, out.cells[b].value = out.cells[b].value, out.cells[a].value
        for name in (a, b):
            out.cells[name].sem_ok = True
            out.cells[name].struct_ok = True
    return out


def dialogue_inconsistent_fill(
    row: TableRow, conv: Conversation, rng: random.Random
) -> TableRow:
    """Overwrite one uniformly chosen cell with one uniformly chosen
    dialogue sentence (turn boundaries are sentence boundaries)."""
    sentences = [s for turn in conv.turns for s in split_sentences(turn.text)]
    if not sentences:
        raise PrefError(f"conversation {conv.id!r} has no sentences")
    columns = list(row.cells)
    if not columns:
        raise PrefError("row has no columns")
    out = _clone_row(row)
    target = rng.choice(columns)
    cell = out.cells[target]
    cell.value = rng.choice(sentences)
    cell.sem_ok = True
    cell.struct_ok = True
    return out


@dataclass
class PerturbConfig:
    drop_rate: float = 0.3
    noise_rate: float = 0.3
    swap_pairs: int = 1


def make_negative(
    row: TableRow,
    conv: Conversation,
    mode: str,
    rng: random.Random,
    config: PerturbConfig | None = None,
) -> tuple[TableRow, list[str]]:
    """Apply the named perturbation; re-draw up to 8 times if the result is
    identical to the input, then force a dialogue fill."""
    if mode not in PERTURBATION_MODES:
        raise PrefError(f"unknown perturbation mode {mode!r}")
    config = config or PerturbConfig()

    def run_once() -> tuple[TableRow, list[str]]:
        if mode == "combo":
            count = rng.randint(2, 3)
            chosen = rng.sample(["drop", "hallucinate", "swap", "dialogue"], count)
            out = row
            for name in chosen:
                out = _apply_single(out, conv, name, rng, config)
            return out, chosen
        return _apply_single(row, conv, mode, rng, config), [mode]

    for _ in range(9):
        negative, applied = run_once()
        if not rows_equal(negative, row):
            return negative, applied
    forced = dialogue_inconsistent_fill(row, conv, rng)
    return forced, ["dialogue"]


def _apply_single(
    row: TableRow, conv: Conversation, mode: str, rng: random.Random, config: PerturbConfig
) -> TableRow:
    if mode == "drop":
        return drop_random_values(row, config.drop_rate, rng)
    if mode == "hallucinate":
        return random_hallucination(row, config.noise_rate, conv, rng)
    if mode == "swap":
        return swap_fields(row, config.swap_pairs, rng)
    if mode == "dialogue":
        return dialogue_inconsistent_fill(row, conv, rng)
    raise PrefError(f"unknown perturbation mode {mode!r}")


def build_preference_set(
    rows: Sequence[TableRow],
    corpus: Sequence[Conversation],
    *,
    seed: int = 0,
    config: PerturbConfig | None = None,
) -> list[PreferencePair]:
    """One pair per row; the mode is drawn per row from a seeded rng derived
    from (seed, conversation_id)."""
    conversations = {c.id: c for c in corpus}
    missing = [r.conversation_id for r in rows if r.conversation_id not in conversations]
    if missing:
        raise PrefError(f"rows without matching conversations: {missing}")

    pairs: list[PreferencePair] = []
    for row in rows:
        conv = conversations[row.conversation_id]
        row_seed = derive_seed(seed, row.conversation_id)
        rng = random.Random(row_seed)
        mode = rng.choice(PERTURBATION_MODES)
        negative, applied = make_negative(row, conv, mode, rng, config)
        pairs.append(
            PreferencePair(
                conversation_id=row.conversation_id,
                positive=row,
                negative=negative,
                modes=applied,
                seed=row_seed,
            )
        )
    return pairs


def negatives_csv(pairs: Sequence[PreferencePair]) -> str:
    """Render the negatives-only CSV: schema columns, then conversation_id
    and the applied modes."""
    if not pairs:
        return ""
    columns = list(pairs[0].negative.cells)
    buffer = io.StringIO()
    writer = csv.writer(buffer, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow([*columns, "conversation_id", "modes"])
    for pair in pairs:
        cells = pair.negative.cells
        rendered = [
            "" if cells[name].is_null() else value_to_string(cells[name].value)
            for name in columns
        ]
        writer.writerow([*rendered, pair.conversation_id, "|".join(pair.modes)])
    return buffer.getvalue()
