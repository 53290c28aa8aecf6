"""Schema induction: evolve table metadata over a conversation corpus.

Each conversation contributes a candidate schema.  Candidates are
normalized, scored per column against the conversation's problem text,
classified into update operations (ADD / UPDATE / MERGE / KEEP / DELETE),
and applied greedily under a hard column-capacity budget.  An operation is
admitted only when it improves a schema objective

    L(M) = coverage + structure

where coverage is the mean, over scored candidate columns, of the best
overall quality among schema columns that cover them, and structure is
1 minus four bounded penalties (duplicate names, over-capacity,
non-snake-case names, unknown dtypes).  The governance model proposes the
evolved schema; its proposal is diffed into operations locally and every
operation is re-gated numerically, so local invariants always win.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .corpus import Conversation
from .gateway import Gateway, GatewayError, PayloadError
from .schema import (
    DTYPES,
    ColumnSpec,
    Metadata,
    SchemaError,
    normalize_metadata,
)
from .textutil import is_snake_case, jaccard, token_set

log = logging.getLogger(__name__)


class OpError(ValueError):
    """An operation cannot be applied to the given schema."""


class DuplicateColumnError(OpError):
    pass


class MissingTargetError(OpError):
    pass


class CapacityError(OpError):
    pass


NEGATIVE_INFINITY = float("-inf")


@dataclass
class QualityScore:
    relevance: float
    answerability: float
    overall: float
    justification: str = ""

    def clamped(self) -> "QualityScore":
        def clamp(x: float, label: str) -> float:
            if x < 0.0 or x > 1.0:
                log.warning("quality score %s=%s outside [0, 1]; clamping", label, x)
                return min(1.0, max(0.0, x))
            return x

        return QualityScore(
            relevance=clamp(self.relevance, "relevance"),
            answerability=clamp(self.answerability, "answerability"),
            overall=clamp(self.overall, "overall"),
            justification=self.justification,
        )


class OpKind(str, Enum):
    ADD = "ADD"
    UPDATE = "UPDATE"
    MERGE = "MERGE"
    KEEP = "KEEP"
    DELETE = "DELETE"


@dataclass
class MetadataOp:
    kind: OpKind
    candidate: ColumnSpec
    targets: list[str] = field(default_factory=list)
    rationale: str = ""

    def validate(self) -> None:
        if self.kind is OpKind.ADD and self.targets:
            raise OpError("ADD must not name targets")
        if self.kind is OpKind.KEEP and len(self.targets) != 1:
            raise OpError("KEEP names exactly one existing target")
        if self.kind in (OpKind.UPDATE, OpKind.MERGE, OpKind.DELETE) and not self.targets:
            raise OpError(f"{self.kind.value} names at least one existing target")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "candidate": self.candidate.to_dict(),
            "targets": list(self.targets),
            "rationale": self.rationale,
        }


ScoredColumns = Sequence[tuple[ColumnSpec, QualityScore]]


def covers(schema_col: ColumnSpec, candidate: ColumnSpec) -> bool:
    """A schema column covers a candidate when names match after local
    normalization, or their semantic descriptions overlap strongly."""
    if schema_col.normalized().name == candidate.normalized().name:
        return True
    return jaccard(token_set(schema_col.semantic), token_set(candidate.semantic)) >= 0.5


def objective(meta: Metadata, scored: ScoredColumns) -> float:
    """Schema objective L = coverage + structure; 0.0 for the empty/empty case."""
    if not meta.columns and not scored:
        return 0.0

    coverage = 0.0
    if scored:
        total = 0.0
        for candidate, score in scored:
            if any(covers(col, candidate) for col in meta.columns):
                total += score.overall
        coverage = total / len(scored)

    structure = 1.0
    n = len(meta.columns)
    if n:
        names = meta.column_names()
        duplicate_penalty = (n - len(set(names))) / n
        capacity_penalty = min(1.0, max(0, n - meta.capacity) / meta.capacity)
        snake_penalty = sum(1 for c in meta.columns if not is_snake_case(c.name)) / n
        dtype_penalty = sum(1 for c in meta.columns if c.dtype not in DTYPES) / n
        structure = 1.0 - (duplicate_penalty + capacity_penalty + snake_penalty + dtype_penalty)
    return coverage + structure


def apply_op(meta: Metadata, op: MetadataOp) -> Metadata:
    """Apply one operation, returning a new schema; version is not touched
    here (batch application owns version bumps)."""
    op.validate()
    new = meta.copy()
    names = new.column_names()

    if op.kind is OpKind.KEEP:
        return new

    if op.kind is OpKind.ADD:
        if op.candidate.name in names:
            raise DuplicateColumnError(f"column {op.candidate.name!r} already exists")
        if len(new.columns) + 1 > new.capacity:
            raise CapacityError(f"capacity {new.capacity} reached; cannot add {op.candidate.name!r}")
        new.columns.append(op.candidate)
        return new

    missing = [t for t in op.targets if t not in names]
    if missing:
        raise MissingTargetError(f"{op.kind.value} targets not in schema: {missing}")

    if op.kind is OpKind.DELETE:
        new.columns = [c for c in new.columns if c.name not in set(op.targets)]
        return new

    # UPDATE / MERGE: candidate replaces the first target in place, the
    # remaining targets are removed.
    survivors = [c.name for c in new.columns if c.name not in set(op.targets)]
    if op.candidate.name in survivors:
        raise DuplicateColumnError(
            f"{op.kind.value} result would duplicate column {op.candidate.name!r}"
        )
    first = op.targets[0]
    rebuilt: list[ColumnSpec] = []
    for col in new.columns:
        if col.name == first:
            rebuilt.append(op.candidate)
        elif col.name in set(op.targets):
            continue
        else:
            rebuilt.append(col)
    new.columns = rebuilt
    if len(new.columns) > new.capacity:
        raise CapacityError(f"{op.kind.value} would exceed capacity {new.capacity}")
    return new


def gain(op: MetadataOp, meta: Metadata, scored: ScoredColumns) -> float:
    """Objective delta of applying `op`; uniqueness/capacity conflicts are
    reported as -inf, missing targets raise."""
    if op.kind is OpKind.KEEP:
        return 0.0
    try:
        updated = apply_op(meta, op)
    except (DuplicateColumnError, CapacityError):
        return NEGATIVE_INFINITY
    return objective(updated, scored) - objective(meta, scored)


@dataclass
class OpRecord:
    """Audit entry for one proposed operation within a batch."""

    op: MetadataOp
    delta_initial: float | None
    delta_applied: float | None
    applied: bool
    reason: str

    def to_dict(self) -> dict[str, Any]:
        def enc(x: float | None) -> Any:
            if x is None:
                return None
            return x if x != NEGATIVE_INFINITY else "-inf"

        return {
            **self.op.to_dict(),
            "delta_initial": enc(self.delta_initial),
            "delta_applied": enc(self.delta_applied),
            "applied": self.applied,
            "reason": self.reason,
        }


def apply_ops(
    meta: Metadata, ops: Sequence[MetadataOp], scored: ScoredColumns
) -> tuple[Metadata, list[OpRecord]]:
    """Apply a batch greedily in descending initial-gain order.

    Each operation's gain is recomputed against the running schema at its
    application instant; non-DELETE ops require a strictly positive gain,
    DELETE requires a non-negative one.  Inapplicable ops are skipped and
    recorded.  The version is bumped by exactly one when anything applied.
    """
    entries: list[tuple[MetadataOp, float | None]] = []
    records: list[OpRecord] = []
    for op in ops:
        try:
            entries.append((op, gain(op, meta, scored)))
        except OpError as exc:
            records.append(OpRecord(op, None, None, False, f"inapplicable: {exc}"))
            log.warning("skipping inapplicable op %s: %s", op.kind.value, exc)

    entries.sort(key=lambda e: (-(e[1] if e[1] is not None else NEGATIVE_INFINITY), e[0].candidate.name, e[0].kind.value))

    running = meta.copy()
    applied_any = False
    for op, delta_initial in entries:
        if op.kind is OpKind.KEEP:
            records.append(OpRecord(op, 0.0, None, False, "keep retains existing schema"))
            continue
        try:
            delta = gain(op, running, scored)
        except OpError as exc:
            records.append(OpRecord(op, delta_initial, None, False, f"inapplicable: {exc}"))
            log.warning("skipping inapplicable op %s: %s", op.kind.value, exc)
            continue
        admit = delta >= 0.0 if op.kind is OpKind.DELETE else delta > 0.0
        if not admit:
            records.append(OpRecord(op, delta_initial, delta, False, "gain gate rejected"))
            continue
        running = apply_op(running, op)
        applied_any = True
        records.append(OpRecord(op, delta_initial, delta, True, "applied"))

    if applied_any:
        running.version = meta.version + 1
    running.validate()
    return running, records


class SchemaInducer:
    """Drives the per-conversation extract / normalize / score / decide /
    apply loop through a gateway."""

    def __init__(self, gateway: Gateway, *, capacity: int = 20):
        self.gateway = gateway
        self.capacity = capacity

    def extract_candidate_schema(self, conv: Conversation) -> Metadata:
        """Ask the model for a raw candidate schema for one conversation.

        Invalid dtypes and names pass through untouched; the normalizer
        owns fixing them.
        """
        if not conv.turns:
            raise ValueError(f"conversation {conv.id!r} has no turns")
        payload, _ = self.gateway.complete_json(
            "extract_schema", {"dialog": conv.text(), "conversation_id": conv.id}
        )
        meta = Metadata.from_persist(payload, capacity=self.capacity)
        log.debug("conversation %s: extracted %d candidate columns", conv.id, len(meta.columns))
        return meta

    def normalize_schema(self, raw: Metadata) -> Metadata:
        """Model-side normalization with a deterministic local safety net."""
        try:
            payload, _ = self.gateway.complete_json(
                "normalize_schema",
                {"raw_schema": _persist_json(raw)},
            )
            candidate = Metadata.from_persist(payload, capacity=raw.capacity)
        except (GatewayError, SchemaError) as exc:
            log.warning("schema normalization output unusable (%s); using local fallback", exc)
            candidate = raw
        normalized = normalize_metadata(candidate)
        if len(normalized.columns) != len(raw.columns):
            # Model dropped or invented columns; fall back to normalizing the input.
            log.warning(
                "normalizer changed column count (%d -> %d); using local fallback",
                len(raw.columns),
                len(normalized.columns),
            )
            normalized = normalize_metadata(raw)
        return normalized

    def score_columns(
        self, current: Metadata, candidate: Metadata, problem_context: str
    ) -> list[tuple[ColumnSpec, QualityScore]]:
        """One quality score per candidate column, clamped into [0, 1]."""
        if not candidate.columns:
            return []
        payload, _ = self.gateway.complete_json(
            "quality_check",
            {
                "current_meta_data": _persist_json(current),
                "new_schema": _persist_json(candidate),
                "problem": problem_context,
            },
        )
        raw_cols = payload.get("Columns", payload) if isinstance(payload, dict) else payload
        by_name: dict[str, dict] = {}
        if isinstance(raw_cols, list):
            for entry in raw_cols:
                if isinstance(entry, dict) and isinstance(entry.get("name"), str):
                    by_name[entry["name"]] = entry

        scored: list[tuple[ColumnSpec, QualityScore]] = []
        for col in candidate.columns:
            entry = by_name.get(col.name, {})
            raw_score = entry.get("quality_score", {})
            if not isinstance(raw_score, dict):
                raw_score = {}
            if not raw_score:
                log.warning("no quality score for column %r; defaulting to 0", col.name)
            score = QualityScore(
                relevance=_as_float(raw_score.get("relevance", 0.0)),
                answerability=_as_float(raw_score.get("answerability", 0.0)),
                overall=_as_float(raw_score.get("overall", 0.0)),
                justification=str(raw_score.get("justification", "")),
            ).clamped()
            scored.append((col, score))
        return scored

    def decide_ops(
        self, current: Metadata, scored: ScoredColumns, problem_context: str
    ) -> list[MetadataOp]:
        """Classify each scored candidate into an operation.

        The governance model proposes a full evolved schema; the proposal is
        diffed against the current schema to recover per-column operations:
        candidates adopted under their own name become ADD, candidates whose
        name-token superset displaced existing columns become UPDATE/MERGE,
        rejected candidates become KEEP of the covering column when one
        exists, and displaced-without-replacement existing columns become
        DELETE proposals.  Every operation is still gated numerically at
        application time.
        """
        annotated = _annotate(scored)
        payload, _ = self.gateway.complete_json(
            "governance_merge",
            {
                "current_meta_data": _persist_json(current),
                "quality_annotated_schema": annotated,
                "problem": problem_context,
            },
        )
        try:
            proposal = normalize_metadata(Metadata.from_persist(payload, capacity=current.capacity))
        except SchemaError as exc:
            log.warning("governance proposal unusable (%s); treating as no-change", exc)
            proposal = current.copy()

        current_names = set(current.column_names())
        proposal_names = set(proposal.column_names())
        vanished = [n for n in current.column_names() if n not in proposal_names]
        claimed: set[str] = set()

        ops: list[MetadataOp] = []
        for candidate, _score in scored:
            if candidate.name in current_names:
                ops.append(
                    MetadataOp(
                        OpKind.KEEP,
                        candidate,
                        targets=[candidate.name],
                        rationale="candidate duplicates an existing column",
                    )
                )
                continue
            if candidate.name in proposal_names:
                cand_tokens = set(candidate.name.split("_"))
                matches = [
                    name
                    for name in vanished
                    if name not in claimed and set(name.split("_")) < cand_tokens
                ]
                if len(matches) >= 2:
                    ops.append(
                        MetadataOp(
                            OpKind.MERGE,
                            candidate,
                            targets=matches,
                            rationale="candidate consolidates displaced columns",
                        )
                    )
                elif len(matches) == 1:
                    ops.append(
                        MetadataOp(
                            OpKind.UPDATE,
                            candidate,
                            targets=matches,
                            rationale="candidate refines an existing column",
                        )
                    )
                else:
                    ops.append(
                        MetadataOp(OpKind.ADD, candidate, rationale="new column adopted")
                    )
                claimed.update(matches)
                continue
            covering = next((c for c in current.columns if covers(c, candidate)), None)
            if covering is not None:
                ops.append(
                    MetadataOp(
                        OpKind.KEEP,
                        candidate,
                        targets=[covering.name],
                        rationale=f"existing column {covering.name!r} already covers candidate",
                    )
                )
            else:
                ops.append(
                    MetadataOp(
                        OpKind.ADD,
                        candidate,
                        rationale="not in governance proposal; gain gate decides",
                    )
                )

        for name in vanished:
            if name in claimed:
                continue
            spec = current.find(name)
            if spec is None:
                continue
            ops.append(
                MetadataOp(
                    OpKind.DELETE,
                    spec,
                    targets=[name],
                    rationale="governance proposal removed this column",
                )
            )
        return ops

    def induce(
        self,
        corpus: Sequence[Conversation],
        m0: Metadata | None = None,
        *,
        audit: list[dict] | None = None,
    ) -> Metadata:
        """Sequential pass over the corpus; returns the final schema.

        Per-conversation model failures skip that conversation with a logged
        warning; the fold continues.  Audit entries record proposed and
        applied operations with their gains and objective values.
        """
        meta = (m0 or Metadata(capacity=self.capacity)).copy()
        meta.validate()
        for conv in corpus:
            try:
                raw = self.extract_candidate_schema(conv)
                candidate = self.normalize_schema(raw)
                problem = conv.first_user_text()
                scored = self.score_columns(meta, candidate, problem)
                ops = self.decide_ops(meta, scored, problem)
                objective_before = objective(meta, scored)
                updated, records = apply_ops(meta, ops, scored)
                if audit is not None:
                    audit.append(
                        {
                            "conversation_id": conv.id,
                            "objective_before": objective_before,
                            "objective_after": objective(updated, scored),
                            "version_before": meta.version,
                            "version_after": updated.version,
                            "ops": [r.to_dict() for r in records],
                        }
                    )
                meta = updated
            except (GatewayError, SchemaError, PayloadError) as exc:
                log.warning("conversation %s skipped during induction: %s", conv.id, exc)
                if audit is not None:
                    audit.append({"conversation_id": conv.id, "skipped": str(exc)})
        return meta


def _persist_json(meta: Metadata) -> str:
    return json.dumps(meta.to_persist(), ensure_ascii=False)


def _annotate(scored: ScoredColumns) -> str:
    payload = {
        "Columns": [
            {
                **col.to_dict(),
                "quality_score": {
                    "relevance": score.relevance,
                    "answerability": score.answerability,
                    "overall": score.overall,
                    "justification": score.justification,
                },
            }
            for col, score in scored
        ]
    }
    return json.dumps(payload, ensure_ascii=False)


def _as_float(value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return 0.0
