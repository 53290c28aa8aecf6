"""Row generation and the two-sided validation gate.

One row is generated per conversation against the frozen schema.  Every
cell then passes a structural check (dtype parse + recognized constraints)
and a semantic check (is the value supported by the conversation, judged
per row in one batched call).  A cell failing either check is nulled; in
the no-validation ablation the verdicts are still recorded but values are
kept.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Sequence

from .corpus import Conversation
from .gateway import Gateway, GatewayError, PayloadError
from .schema import ColumnSpec, Metadata
from .textutil import value_to_string

log = logging.getLogger(__name__)

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")

_RECOGNIZED_CONSTRAINTS = {"not null", "unique", "primary key", "foreign key"}

Scalar = Any  # int | float | bool | str | date | datetime | None


@dataclass
class CellValue:
    column: str
    value: Scalar = None
    sem_ok: bool = True
    struct_ok: bool = True

    def is_null(self) -> bool:
        return self.value is None


@dataclass
class TableRow:
    conversation_id: str
    metadata_version: int
    cells: dict[str, CellValue] = field(default_factory=dict)

    def null_fraction(self) -> float:
        if not self.cells:
            return 0.0
        return sum(1 for c in self.cells.values() if c.is_null()) / len(self.cells)

    def to_dict(self) -> dict[str, Any]:
        return {
            "conversation_id": self.conversation_id,
            "metadata_version": self.metadata_version,
            "cells": {name: _encode_value(c.value) for name, c in self.cells.items()},
            "flags": {name: {"sem": c.sem_ok, "struct": c.struct_ok} for name, c in self.cells.items()},
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any], meta: Metadata | None = None) -> "TableRow":
        cells_raw = payload.get("cells")
        flags = payload.get("flags", {})
        if not isinstance(cells_raw, dict):
            raise ValueError("row payload missing 'cells' object")
        cells: dict[str, CellValue] = {}
        for name, value in cells_raw.items():
            flag = flags.get(name, {}) if isinstance(flags, dict) else {}
            col = meta.find(name) if meta is not None else None
            cells[name] = CellValue(
                column=name,
                value=_decode_value(value, col),
                sem_ok=bool(flag.get("sem", True)),
                struct_ok=bool(flag.get("struct", True)),
            )
        return cls(
            conversation_id=str(payload.get("conversation_id", "")),
            metadata_version=int(payload.get("metadata_version", 0)),
            cells=cells,
        )


def _encode_value(value: Scalar) -> Any:
    if isinstance(value, datetime):
        return value.strftime("%Y-%m-%dT%H:%M:%S")
    if isinstance(value, date):
        return value.strftime("%Y-%m-%d")
    return value


def _decode_value(value: Any, col: ColumnSpec | None) -> Scalar:
    if value is None or col is None:
        return value
    if col.dtype in ("date", "datetime") and isinstance(value, str):
        ok, parsed = _parse_typed(value, col.dtype)
        return parsed if ok else value
    return value


def validate_structural(raw_value: str | None, col: ColumnSpec) -> tuple[bool, Scalar]:
    """Deterministic dtype/constraint check; returns (ok, typed value or None).

    NULL passes unless the column is declared not-null.  Uniqueness is
    table-level and checked in `build_tables`; unrecognized constraints pass
    with a warning.
    """
    for constraint in col.constraints:
        if constraint.strip().lower() not in _RECOGNIZED_CONSTRAINTS:
            log.warning("column %r: unrecognized constraint %r ignored", col.name, constraint)
    if raw_value is None:
        if col.has_constraint("not null"):
            return False, None
        return True, None
    ok, typed = _parse_typed(str(raw_value), col.dtype)
    if not ok:
        return False, None
    return True, typed


def _parse_typed(text: str, dtype: str) -> tuple[bool, Scalar]:
    text = text.strip()
    if dtype == "int":
        return (True, int(text)) if _INT_RE.match(text) else (False, None)
    if dtype == "float":
        return (True, float(text)) if _FLOAT_RE.match(text) else (False, None)
    if dtype == "boolean":
        lowered = text.lower()
        if lowered in ("true", "false"):
            return True, lowered == "true"
        return False, None
    if dtype == "date":
        try:
            return True, datetime.strptime(text, "%Y-%m-%d").date()
        except ValueError:
            return False, None
    if dtype == "datetime":
        try:
            return True, datetime.strptime(text, "%Y-%m-%dT%H:%M:%S")
        except ValueError:
            return False, None
    return True, text


class TableBuilder:
    """Generates and validates one row per conversation against frozen metadata.

    Rows are independent given the frozen schema, so generation may fan out
    across `jobs` workers; output order is always corpus order.
    """

    def __init__(self, gateway: Gateway, meta: Metadata, *, validate: bool = True, jobs: int = 1):
        self.gateway = gateway
        self.meta = meta
        self.validate = validate
        self.jobs = max(1, jobs)

    def generate_row(self, conv: Conversation) -> dict[str, str | None]:
        """Raw model row: unknown keys dropped, missing keys nulled.

        A row that stays unparseable after the repair round degrades to a
        fully-null raw row so the build can continue.
        """
        try:
            payload, _ = self.gateway.complete_json(
                "generate_row",
                {
                    "meta_data": json.dumps(self.meta.to_persist(), ensure_ascii=False),
                    "dialogue": conv.text(),
                    "conversation_id": conv.id,
                },
            )
        except (GatewayError, PayloadError) as exc:
            log.warning("row generation failed for %s: %s; emitting null row", conv.id, exc)
            return {name: None for name in self.meta.column_names()}

        row_obj = payload.get("row", payload) if isinstance(payload, dict) else {}
        if not isinstance(row_obj, dict):
            log.warning("row payload for %s is not an object; emitting null row", conv.id)
            row_obj = {}

        known = set(self.meta.column_names())
        raw: dict[str, str | None] = {}
        for key, value in row_obj.items():
            if key not in known:
                log.warning("row for %s: dropping unknown column %r", conv.id, key)
                continue
            raw[key] = None if value is None else value_to_string(value)
        for name in self.meta.column_names():
            raw.setdefault(name, None)
        return raw

    def judge_cells(self, conv: Conversation, cells: dict[str, Scalar]) -> dict[str, bool]:
        """Batched semantic verdicts for the non-null cells of one row."""
        if not cells:
            return {}
        rendered = {name: value_to_string(v) for name, v in cells.items()}
        try:
            payload, _ = self.gateway.complete_json(
                "judge_semantic",
                {
                    "dialogue": conv.text(),
                    "cells": json.dumps(rendered, ensure_ascii=False, sort_keys=True),
                    "conversation_id": conv.id,
                },
            )
        except (GatewayError, PayloadError) as exc:
            log.warning("semantic judge failed for %s (%s); failing closed", conv.id, exc)
            return {name: False for name in cells}
        verdicts_raw = payload.get("verdicts", {}) if isinstance(payload, dict) else {}
        verdicts: dict[str, bool] = {}
        for name in cells:
            verdict = str(verdicts_raw.get(name, "")).strip().lower()
            if verdict not in ("yes", "no"):
                log.warning("ambiguous semantic verdict %r for %s.%s; failing closed", verdict, conv.id, name)
            verdicts[name] = verdict == "yes"
        return verdicts

    def validate_semantic(self, value: Scalar, col: ColumnSpec, conv: Conversation) -> bool:
        """Single-cell convenience wrapper over the batched judge."""
        if value is None:
            return True
        return self.judge_cells(conv, {col.name: value})[col.name]

    def finalize_row(self, conv: Conversation, raw: dict[str, str | None]) -> TableRow:
        """Gate every cell: value survives only when both checks pass.

        With validation disabled, verdicts are still computed and recorded
        but values are kept (structurally unparseable values stay as their
        raw strings).
        """
        typed: dict[str, tuple[bool, Scalar, str | None]] = {}
        for col in self.meta.columns:
            raw_value = raw.get(col.name)
            ok, value = validate_structural(raw_value, col)
            typed[col.name] = (ok, value, raw_value)

        to_judge = {
            name: value for name, (ok, value, _raw) in typed.items() if ok and value is not None
        }
        verdicts = self.judge_cells(conv, to_judge) if to_judge else {}

        cells: dict[str, CellValue] = {}
        for col in self.meta.columns:
            struct_ok, value, raw_value = typed[col.name]
            sem_ok = verdicts.get(col.name, True) if value is not None else True
            if self.validate:
                final = value if (struct_ok and sem_ok) else None
            else:
                final = value if struct_ok else raw_value
            cells[col.name] = CellValue(
                column=col.name, value=final, sem_ok=sem_ok, struct_ok=struct_ok
            )
        return TableRow(
            conversation_id=conv.id, metadata_version=self.meta.version, cells=cells
        )

    def build(self, corpus: Sequence[Conversation]) -> tuple[list[TableRow], dict[str, Any]]:
        """One row per conversation, order preserved, plus per-run stats."""
        if self.jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                rows = list(
                    pool.map(lambda conv: self.finalize_row(conv, self.generate_row(conv)), corpus)
                )
        else:
            rows = [self.finalize_row(conv, self.generate_row(conv)) for conv in corpus]
        if self.validate:
            _enforce_unique(rows, self.meta)
        stats = {
            "n_rows": len(rows),
            "mean_null_fraction": (
                sum(r.null_fraction() for r in rows) / len(rows) if rows else 0.0
            ),
            "struct_failures": sum(
                1 for r in rows for c in r.cells.values() if not c.struct_ok
            ),
            "sem_failures": sum(1 for r in rows for c in r.cells.values() if not c.sem_ok),
        }
        return rows, stats


def _enforce_unique(rows: Sequence[TableRow], meta: Metadata) -> None:
    """Table-level uniqueness: first occurrence wins, later duplicates null."""
    for col in meta.columns:
        if not col.has_constraint("unique"):
            continue
        seen: set[str] = set()
        for row in rows:
            cell = row.cells.get(col.name)
            if cell is None or cell.is_null():
                continue
            rendered = value_to_string(cell.value)
            if rendered in seen:
                log.warning(
                    "unique violation on %s.%s in row %s; nulling",
                    meta.table_name,
                    col.name,
                    row.conversation_id,
                )
                cell.value = None
                cell.struct_ok = False
            else:
                seen.add(rendered)
