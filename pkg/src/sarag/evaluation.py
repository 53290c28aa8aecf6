"""Retrieval, answer, and table-quality metrics.

Retrieval metrics follow the top-3 cutoff definitions: recall is the
fraction of a query's relevant items found in the top 3, reciprocal rank is
1/rank of the first relevant hit (0 when none lands in the top 3).  Table
quality combines four scores in [0, 1] whose mean is the overall score.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from .corpus import Conversation
from .gateway import Gateway, GatewayError, PayloadError
from .schema import DTYPES, Metadata
from .tables import TableRow, validate_structural
from .textutil import is_snake_case, value_to_string

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


@dataclass
class QueryJudgment:
    query_id: str
    relevant_ids: set[str]
    retrieved_top3: list[str]

    def __post_init__(self) -> None:
        if len(self.retrieved_top3) > 3:
            raise EvalError(f"query {self.query_id!r}: retrieved list longer than 3")


def _includable(judgments: Sequence[QueryJudgment]) -> list[QueryJudgment]:
    kept = []
    for j in judgments:
        if j.relevant_ids:
            kept.append(j)
        else:
            log.warning("query %s has no relevant items; excluded", j.query_id)
    if not kept:
        raise EvalError("no includable queries (all have empty relevant sets)")
    return kept


def recall_at_3(judgments: Sequence[QueryJudgment]) -> float:
    kept = _includable(judgments)
    total = 0.0
    for j in kept:
        hits = len(set(j.retrieved_top3) & j.relevant_ids)
        total += hits / len(j.relevant_ids)
    return total / len(kept)


def mrr_at_3(judgments: Sequence[QueryJudgment]) -> float:
    kept = _includable(judgments)
    total = 0.0
    for j in kept:
        rank = 0
        for i, doc_id in enumerate(j.retrieved_top3, start=1):
            if doc_id in j.relevant_ids:
                rank = i
                break
        total += (1.0 / rank) if rank else 0.0
    return total / len(kept)


def judge_correctness(
    query: str,
    answer: str,
    evidence: str,
    gateway: Gateway,
    *,
    gold_keywords: Sequence[str] = (),
) -> float:
    """Judge-scored factual accuracy in [0, 1]; unparseable verdicts score 0."""
    try:
        payload, _ = gateway.complete_json(
            "judge_correctness",
            {
                "query": query,
                "answer": answer,
                "evidence": evidence,
                "gold_keywords": json.dumps(list(gold_keywords), ensure_ascii=False),
            },
        )
        score = float(payload.get("score")) if isinstance(payload, dict) else 0.0
    except (GatewayError, PayloadError, TypeError, ValueError) as exc:
        log.warning("correctness judge verdict unusable (%s); scoring 0", exc)
        return 0.0
    return min(1.0, max(0.0, score))


# ---------------------------------------------------------------------------
# Table quality
# ---------------------------------------------------------------------------


def structural_compliance(meta: Metadata) -> float:
    """Fraction of columns that are fully well-formed."""
    if not meta.columns:
        log.warning("structural compliance of an empty schema is vacuously 1.0")
        return 1.0
    good = 0
    for col in meta.columns:
        if (
            is_snake_case(col.name)
            and col.dtype in DTYPES
            and bool(col.semantic.strip())
            and all(isinstance(c, str) for c in col.constraints)
        ):
            good += 1
    return good / len(meta.columns)


def metadata_effectiveness(
    meta: Metadata,
    rows: Sequence[TableRow],
    probe_queries: Sequence[str],
    embedder,
) -> float:
    """Fraction of columns contributing a non-null cell to a top-3 retrieved
    row for at least one probe query."""
    if not rows:
        raise EvalError("metadata effectiveness needs at least one row")
    if not meta.columns:
        log.warning("metadata effectiveness of an empty schema is vacuously 0.0")
        return 0.0
    from .retrieval import VectorIndex, IndexedDoc, render_row

    docs = []
    for row in rows:
        rendering = render_row(row, meta)
        docs.append(
            IndexedDoc(
                doc_id=f"row:{row.conversation_id}",
                kind="row",
                rendering=rendering,
                vector=embedder.embed(rendering),
            )
        )
    index = VectorIndex(dim=embedder.dim, docs=docs)
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}

    effective: set[str] = set()
    for query in probe_queries:
        top = index.topk(embedder.embed(query), 3, kinds={"row"})
        for doc_id, _score in top:
            row = rows_by_doc[doc_id]
            for name, cell in row.cells.items():
                if not cell.is_null():
                    effective.add(name)
    return len(effective & set(meta.column_names())) / len(meta.columns)


def constraint_satisfaction(rows: Sequence[TableRow], meta: Metadata) -> float:
    """Fraction of cells that re-pass structural validation plus table-level
    uniqueness."""
    total = 0
    good = 0
    unique_seen: dict[str, set[str]] = {}
    for row in rows:
        for col in meta.columns:
            cell = row.cells.get(col.name)
            if cell is None:
                continue
            total += 1
            raw = None if cell.is_null() else value_to_string(cell.value)
            ok, _typed = validate_structural(raw, col)
            if ok and col.has_constraint("unique") and raw is not None:
                seen = unique_seen.setdefault(col.name, set())
                if raw in seen:
                    ok = False
                else:
                    seen.add(raw)
            good += 1 if ok else 0
    if total == 0:
        return 1.0
    return good / total


def semantic_correctness(
    rows: Sequence[TableRow],
    corpus: Sequence[Conversation],
    gateway: Gateway,
) -> float:
    """Fraction of non-null cells supported by their conversation, per the
    semantic judge.  A table with no non-null cells scores vacuously 1.0."""
    from .tables import TableBuilder

    conversations = {c.id: c for c in corpus}
    missing = [r.conversation_id for r in rows if r.conversation_id not in conversations]
    if missing:
        raise EvalError(f"rows without matching conversations: {missing}")

    builder = TableBuilder(gateway, Metadata(columns=[]), validate=True)
    total = 0
    good = 0
    for row in rows:
        cells = {name: c.value for name, c in row.cells.items() if not c.is_null()}
        if not cells:
            continue
        verdicts = builder.judge_cells(conversations[row.conversation_id], cells)
        total += len(cells)
        good += sum(1 for ok in verdicts.values() if ok)
    if total == 0:
        log.warning("semantic correctness of an all-null table is vacuously 1.0")
        return 1.0
    return good / total


@dataclass
class EvalReport:
    mode: str
    recall_at_3: float
    mrr_at_3: float
    correctness: float
    structural_compliance: float
    metadata_effectiveness: float
    constraint_satisfaction: float
    semantic_correctness: float
    n_queries: int
    n_tables: int

    @property
    def table_quality_overall(self) -> float:
        return (
            self.structural_compliance
            + self.metadata_effectiveness
            + self.constraint_satisfaction
            + self.semantic_correctness
        ) / 4.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "recall_at_3": self.recall_at_3,
            "mrr_at_3": self.mrr_at_3,
            "correctness": self.correctness,
            "table_quality": {
                "structural_compliance": self.structural_compliance,
                "metadata_effectiveness": self.metadata_effectiveness,
                "constraint_satisfaction": self.constraint_satisfaction,
                "semantic_correctness": self.semantic_correctness,
                "overall": self.table_quality_overall,
            },
            "n_queries": self.n_queries,
            "n_tables": self.n_tables,
        }

    def text_table(self) -> str:
        rows = [
            ("mode", self.mode),
            ("recall@3", f"{self.recall_at_3:.4f}"),
            ("mrr@3", f"{self.mrr_at_3:.4f}"),
            ("correctness", f"{self.correctness:.4f}"),
            ("structural_compliance", f"{self.structural_compliance:.4f}"),
            ("metadata_effectiveness", f"{self.metadata_effectiveness:.4f}"),
            ("constraint_satisfaction", f"{self.constraint_satisfaction:.4f}"),
            ("semantic_correctness", f"{self.semantic_correctness:.4f}"),
            ("table_quality_overall", f"{self.table_quality_overall:.4f}"),
            ("n_queries", str(self.n_queries)),
            ("n_tables", str(self.n_tables)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


@dataclass
class GoldQuery:
    query_id: str
    query: str
    relevant_ids: set[str]
    gold_keywords: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "GoldQuery":
        return cls(
            query_id=str(payload["query_id"]),
            query=str(payload["query"]),
            relevant_ids={str(r) for r in payload.get("relevant_ids", [])},
            gold_keywords=[str(k) for k in payload.get("gold_keywords", [])],
        )


def load_gold(path) -> list[GoldQuery]:
    from pathlib import Path

    path = Path(path)
    if not path.exists():
        raise EvalError(f"missing gold file: {path}")
    text = path.read_text(encoding="utf-8")
    gold = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            gold.append(GoldQuery.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise EvalError(f"gold file line {lineno}: {exc}") from exc
    if not gold:
        raise EvalError(f"gold file {path} is empty")
    return gold


def retrieved_conversation_ids(ranked_docs: Sequence[tuple[str, float]]) -> list[str]:
    """Collapse ranked doc ids (row:X / conv:X) to conversation ids, keeping
    first-occurrence order, truncated to 3."""
    seen: list[str] = []
    for doc_id, _score in ranked_docs:
        conv_id = doc_id.split(":", 1)[1] if ":" in doc_id else doc_id
        if conv_id not in seen:
            seen.append(conv_id)
        if len(seen) == 3:
            break
    return seen
