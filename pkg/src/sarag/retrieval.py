"""Dense retrieval over rows and conversations, plus iterative evidence
expansion.

The index is a flat container of embedded documents scanned exhaustively at
query time.  Evidence collection seeds a state from the top retrieved rows,
then repeatedly activates the best-scoring unused relation (column) and
follows table lookups from the active values, accumulating value--relation
--information triples until a depth or budget limit is hit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .gateway import EmbeddingProvider, EmbeddingVector, cosine
from .schema import Metadata
from .tables import TableRow
from .textutil import value_to_string

log = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1

DOC_KINDS = ("row", "conversation")


class RetrievalError(RuntimeError):
    pass


@dataclass(frozen=True)
class IndexedDoc:
    doc_id: str
    kind: str
    rendering: str
    vector: EmbeddingVector

    def conversation_id(self) -> str:
        return self.doc_id.split(":", 1)[1] if ":" in self.doc_id else self.doc_id


def render_row(row: TableRow, meta: Metadata) -> str:
    """Non-null cells as `col: value; ...`; a fully-null row renders as the
    table name so it still lands in the index."""
    parts = [
        f"{name}: {value_to_string(cell.value)}"
        for name, cell in row.cells.items()
        if not cell.is_null()
    ]
    return "; ".join(parts) if parts else meta.table_name


def build_index(
    rows: Sequence[TableRow],
    conversations: Iterable,
    meta: Metadata,
    embedder: EmbeddingProvider,
) -> "VectorIndex":
    """One document per row and per conversation, embedded and frozen."""
    docs: list[IndexedDoc] = []
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
    for conv in conversations:
        rendering = conv.text()
        docs.append(
            IndexedDoc(
                doc_id=f"conv:{conv.id}",
                kind="conversation",
                rendering=rendering,
                vector=embedder.embed(rendering),
            )
        )
    return VectorIndex(dim=embedder.dim, docs=docs)


@dataclass
class VectorIndex:
    dim: int
    docs: list[IndexedDoc] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for doc in self.docs:
            if doc.doc_id in seen:
                raise RetrievalError(f"duplicate doc_id in index: {doc.doc_id}")
            seen.add(doc.doc_id)
            if doc.vector.dim != self.dim:
                raise RetrievalError(
                    f"doc {doc.doc_id}: vector dim {doc.vector.dim} != index dim {self.dim}"
                )

    def get(self, doc_id: str) -> IndexedDoc | None:
        for doc in self.docs:
            if doc.doc_id == doc_id:
                return doc
        return None

    def topk(
        self,
        query_vector: EmbeddingVector,
        k: int,
        kinds: set[str] | None = None,
        kind_weights: dict[str, float] | None = None,
    ) -> list[tuple[str, float]]:
        """Top-k by cosine similarity; ties broken by doc_id; k larger than
        the index returns everything.

        Stored vectors are unit-norm (or zero), so the cosine is the dot
        product; it is computed as an exactly-rounded sum so that
        mathematically tied scores compare equal and the doc_id tie-break is
        reproducible by any exact reimplementation.  Optional per-kind
        weights rescale scores for fusion experiments; the default is the
        unweighted merge.
        """
        if not self.docs:
            raise RetrievalError("index is empty")
        if k < 1:
            raise RetrievalError("k must be positive")
        candidates = [d for d in self.docs if kinds is None or d.kind in kinds]
        scored = []
        for doc in candidates:
            if query_vector.is_zero() or doc.vector.is_zero():
                score = 0.0
            else:
                score = math.fsum((query_vector.values * doc.vector.values).tolist())
            if kind_weights is not None:
                score *= kind_weights.get(doc.kind, 1.0)
            scored.append((doc.doc_id, score))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def to_payload(self) -> dict[str, Any]:
        return {
            "format_version": INDEX_FORMAT_VERSION,
            "dim": self.dim,
            "docs": [
                {
                    "doc_id": d.doc_id,
                    "kind": d.kind,
                    "rendering": d.rendering,
                    "vector": d.vector.to_list(),
                }
                for d in self.docs
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "VectorIndex":
        version = payload.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise RetrievalError(f"unsupported index format version: {version}")
        dim = int(payload["dim"])
        docs = []
        for raw in payload.get("docs", []):
            if raw.get("kind") not in DOC_KINDS:
                raise RetrievalError(f"doc {raw.get('doc_id')}: unknown kind {raw.get('kind')!r}")
            values = np.asarray(raw["vector"], dtype=np.float64)
            docs.append(
                IndexedDoc(
                    doc_id=str(raw["doc_id"]),
                    kind=str(raw["kind"]),
                    rendering=str(raw["rendering"]),
                    vector=EmbeddingVector(values=values, normalized=True),
                )
            )
        return cls(dim=dim, docs=docs)


@dataclass(frozen=True)
class EvidenceTriple:
    value: str
    relation: str
    info: str

    def to_dict(self) -> dict[str, str]:
        return {"value": self.value, "relation": self.relation, "info": self.info}


@dataclass(frozen=True)
class ActiveValue:
    doc_id: str
    column: str
    value: str


@dataclass
class EvidenceState:
    """Expansion state: active values, activated relations, accumulated info."""

    step: int = 0
    active_values: tuple[ActiveValue, ...] = ()
    activated_relations: frozenset[str] = frozenset()
    info: tuple[str, ...] = ()
    triples: tuple[EvidenceTriple, ...] = ()
    visited: frozenset[tuple[str, str]] = frozenset()
    terminal: bool = False


def tail(
    value_ref: tuple[str, str], relation: str, rows_by_doc: dict[str, TableRow]
) -> str | None:
    """Table lookup: the non-null cell of the referenced row under `relation`,
    rendered as a string; None when null or absent."""
    doc_id, _column = value_ref
    row = rows_by_doc.get(doc_id)
    if row is None:
        raise RetrievalError(f"tail lookup on non-row doc {doc_id!r}")
    cell = row.cells.get(relation)
    if cell is None:
        log.warning("tail: column %r absent from row %s", relation, doc_id)
        return None
    if cell.is_null():
        return None
    return value_to_string(cell.value)


def score_relations(
    state: EvidenceState,
    query: str,
    meta: Metadata,
    embedder: EmbeddingProvider,
) -> list[str]:
    """Columns not yet activated, ranked by similarity between the query and
    `name: semantic`; deterministic ties by name."""
    query_vec = embedder.embed(query)
    scored = []
    for col in meta.columns:
        if col.name in state.activated_relations:
            continue
        rendering = f"{col.name.replace('_', ' ')}: {col.semantic}"
        scored.append((col.name, cosine(query_vec, embedder.embed(rendering))))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [name for name, _ in scored]


def expand(
    state: EvidenceState,
    query: str,
    rows_by_doc: dict[str, TableRow],
    meta: Metadata,
    embedder: EmbeddingProvider,
    *,
    evidence_budget: int | None = None,
) -> EvidenceState:
    """One expansion step: activate the best unused relation and follow table
    lookups from every active value.  A step that yields nothing marks the
    state terminal; `(doc, relation)` lookups are never repeated."""
    ranked = score_relations(state, query, meta, embedder)
    if not ranked:
        return replace(state, terminal=True)
    relation = ranked[0]

    new_values: list[ActiveValue] = []
    new_info = list(state.info)
    new_triples = list(state.triples)
    visited = set(state.visited)
    seen_docs: set[str] = set()
    for value in sorted(state.active_values, key=lambda v: (v.doc_id, v.column)):
        if evidence_budget is not None and len(new_info) >= evidence_budget:
            break
        if value.doc_id in seen_docs or (value.doc_id, relation) in visited:
            continue
        seen_docs.add(value.doc_id)
        visited.add((value.doc_id, relation))
        looked_up = tail((value.doc_id, value.column), relation, rows_by_doc)
        if looked_up is None:
            continue
        # info is the verbatim lookup result; the relation rides alongside.
        new_info.append(looked_up)
        new_triples.append(EvidenceTriple(value=value.value, relation=relation, info=looked_up))
        new_values.append(ActiveValue(doc_id=value.doc_id, column=relation, value=looked_up))

    return EvidenceState(
        step=state.step + 1,
        active_values=tuple(new_values),
        activated_relations=state.activated_relations | {relation},
        info=tuple(new_info),
        triples=tuple(new_triples),
        visited=frozenset(visited),
        terminal=not new_values,
    )


def should_terminate(state: EvidenceState, *, max_depth: int, evidence_budget: int) -> bool:
    return state.terminal or state.step >= max_depth or len(state.info) >= evidence_budget


@dataclass
class EvidenceBundle:
    """Joint retrieval output plus the expanded evidence triples."""

    ranked_docs: list[tuple[str, float]]
    triples: list[EvidenceTriple]


def collect_evidence(
    query: str,
    index: VectorIndex,
    rows: Sequence[TableRow],
    meta: Metadata,
    embedder: EmbeddingProvider,
    *,
    k: int = 3,
    max_depth: int = 3,
    evidence_budget: int = 10,
    kinds: set[str] | None = None,
    row_weight: float = 1.0,
) -> EvidenceBundle:
    """Retrieve the joint top-k, then expand evidence from the top rows.

    The initial state activates every non-null cell of the top-k rows, each
    contributing a `(value, column, "column: value")` triple; expansion
    triples are capped by the evidence budget.  Restricting `kinds` to
    conversations reproduces a plain text retriever (no expansion possible).
    `row_weight` rescales row scores in the joint ranking only.
    """
    query_vec = embedder.embed(query)
    weights = None if row_weight == 1.0 else {"row": row_weight}
    ranked = index.topk(query_vec, k, kinds=kinds, kind_weights=weights)

    rows_by_doc = {f"row:{row.conversation_id}": row for row in rows}
    initial_values: list[ActiveValue] = []
    initial_triples: list[EvidenceTriple] = []
    if kinds is None or "row" in kinds:
        top_rows = index.topk(query_vec, k, kinds={"row"})
        for doc_id, _score in top_rows:
            row = rows_by_doc.get(doc_id)
            if row is None:
                continue
            for name, cell in row.cells.items():
                if cell.is_null():
                    continue
                rendered = value_to_string(cell.value)
                initial_values.append(ActiveValue(doc_id=doc_id, column=name, value=rendered))
                initial_triples.append(
                    EvidenceTriple(value=rendered, relation=name, info=rendered)
                )

    state = EvidenceState(active_values=tuple(initial_values))
    while not should_terminate(state, max_depth=max_depth, evidence_budget=evidence_budget):
        state = expand(
            state, query, rows_by_doc, meta, embedder, evidence_budget=evidence_budget
        )

    return EvidenceBundle(ranked_docs=ranked, triples=initial_triples + list(state.triples))


def index_to_json(index: VectorIndex) -> str:
    return json.dumps(index.to_payload(), ensure_ascii=False)


def index_from_json(blob: str) -> VectorIndex:
    return VectorIndex.from_payload(json.loads(blob))
