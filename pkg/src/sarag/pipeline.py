"""Stage orchestration shared by the HTTP service and the CLI client.

Stages write into a run directory (`manifest.json` plus the artifact files)
and are idempotent given identical inputs, config, and seed.  The ablation
flags reshape what the stages build: `no_metadata` replaces schema
evolution by the per-conversation candidate union, `no_validation` keeps
generated values regardless of the validation verdicts.
"""

from __future__ import annotations

import logging
import shutil
from pathlib import Path
from typing import Any, Sequence

from importlib import resources

from .config import PipelineConfig
from .corpus import Conversation, load_corpus
from .evaluation import (
    EvalReport,
    QueryJudgment,
    judge_correctness,
    load_gold,
    metadata_effectiveness,
    mrr_at_3,
    recall_at_3,
    retrieved_conversation_ids,
    semantic_correctness,
    structural_compliance,
    constraint_satisfaction,
)
from .gateway import Gateway
from .inducer import SchemaInducer
from .prefs import PerturbConfig, build_preference_set
from .providers import build_gateway
from .responder import Answer, generate_answer
from .retrieval import EvidenceBundle, build_index, collect_evidence
from .schema import Metadata
from .store import RunStore, StoreError
from .tables import CellValue, TableBuilder, TableRow

log = logging.getLogger(__name__)

EVAL_MODES = ("full", "no_metadata", "no_validation", "baseline")


def default_positives_path() -> Path:
    return Path(str(resources.files("sarag").joinpath("fixtures/toy_positives.jsonl")))


def toy_corpus_path() -> Path:
    return Path(str(resources.files("sarag").joinpath("fixtures/toy_corpus.jsonl")))


def toy_gold_path() -> Path:
    return Path(str(resources.files("sarag").joinpath("fixtures/toy_gold.jsonl")))


class PipelineError(RuntimeError):
    pass


def _store(run_dir: str | Path) -> RunStore:
    return RunStore(run_dir)


def _manifest(store: RunStore, config: PipelineConfig):
    manifest = store.manifest_or_new(config_hash=config.fingerprint(), seed=config.seed)
    manifest.config_hash = config.fingerprint()
    manifest.seed = config.seed
    return manifest


def _load_corpus_for(store: RunStore, config: PipelineConfig) -> list[Conversation]:
    manifest = store.load_manifest()
    corpus_path = manifest.paths.get("corpus") or manifest.extras.get("corpus_path")
    if not corpus_path:
        raise StoreError("missing artifact: corpus (run ingest or induce first)")
    return load_corpus(corpus_path)


def stage_ingest(run_dir: str | Path, corpus_path: str | Path, config: PipelineConfig) -> dict:
    """Validate the corpus and copy it into the run directory."""
    conversations = load_corpus(corpus_path)
    store = _store(run_dir)
    manifest = _manifest(store, config)
    checksum = store.save("corpus", conversations, manifest)
    store.write_manifest(manifest)
    return {"artifact": "corpus", "path": str(store.artifact_path("corpus")),
            "checksum": checksum, "n_conversations": len(conversations)}


def _union_candidates(
    inducer: SchemaInducer, corpus: Sequence[Conversation], config: PipelineConfig
) -> Metadata:
    """No-evolution schema: each conversation's normalized candidate columns,
    deduplicated by name, first occurrence wins.  Capacity is widened so the
    union always validates."""
    columns = []
    seen: set[str] = set()
    for conv in corpus:
        candidate = inducer.normalize_schema(inducer.extract_candidate_schema(conv))
        for col in candidate.columns:
            if col.name not in seen:
                seen.add(col.name)
                columns.append(col)
    return Metadata(
        columns=columns,
        version=1,
        capacity=max(len(columns), config.capacity),
    )


def stage_induce(
    run_dir: str | Path, corpus_path: str | Path | None, config: PipelineConfig
) -> dict:
    """Run schema induction (or the no-evolution union under the ablation)."""
    store = _store(run_dir)
    manifest = _manifest(store, config)

    if corpus_path is None:
        conversations = _load_corpus_for(store, config)
    else:
        conversations = load_corpus(corpus_path)
        store.save("corpus", conversations, manifest)

    gateway = build_gateway(config)
    inducer = SchemaInducer(gateway, capacity=config.capacity)
    audit: list[dict] = []
    if "no_metadata" in config.ablations:
        meta = _union_candidates(inducer, conversations, config)
        audit.append({"mode": "no_metadata", "n_columns": len(meta.columns)})
    else:
        meta = inducer.induce(conversations, audit=audit)

    checksum = store.save("metadata", meta, manifest)
    store.save("audit", audit, manifest)
    store.write_manifest(manifest)
    return {
        "artifact": "metadata",
        "path": str(store.artifact_path("metadata")),
        "checksum": checksum,
        "version": meta.version,
        "n_columns": len(meta.columns),
    }


def _load_meta(store: RunStore, config: PipelineConfig) -> Metadata:
    capacity = config.capacity
    meta = store.load("metadata", capacity=capacity)
    if len(meta.columns) > capacity:
        meta.capacity = len(meta.columns)
    return meta


def _build_rows(
    conversations: Sequence[Conversation],
    meta: Metadata,
    gateway: Gateway,
    config: PipelineConfig,
) -> tuple[list[TableRow], dict]:
    validate = "no_validation" not in config.ablations
    if "no_metadata" in config.ablations:
        # Rows come from each conversation's own candidate schema, aligned
        # to the union columns afterwards.
        inducer = SchemaInducer(gateway, capacity=config.capacity)
        rows: list[TableRow] = []
        for conv in conversations:
            own = inducer.normalize_schema(inducer.extract_candidate_schema(conv))
            own.version = meta.version
            builder = TableBuilder(gateway, own, validate=validate)
            partial = builder.finalize_row(conv, builder.generate_row(conv))
            aligned = TableRow(
                conversation_id=conv.id,
                metadata_version=meta.version,
                cells={
                    name: partial.cells.get(name) or _null_cell(name)
                    for name in meta.column_names()
                },
            )
            rows.append(aligned)
        stats = {"n_rows": len(rows), "mode": "no_metadata"}
        return rows, stats
    builder = TableBuilder(gateway, meta, validate=validate, jobs=config.jobs)
    return builder.build(conversations)


def _null_cell(name: str) -> CellValue:
    return CellValue(column=name, value=None)


def stage_build_tables(run_dir: str | Path, config: PipelineConfig) -> dict:
    store = _store(run_dir)
    manifest = _manifest(store, config)
    conversations = _load_corpus_for(store, config)
    meta = _load_meta(store, config)
    gateway = build_gateway(config)

    rows, stats = _build_rows(conversations, meta, gateway, config)
    checksum = store.save("rows", rows, manifest)
    store.write_manifest(manifest)
    return {
        "artifact": "rows",
        "path": str(store.artifact_path("rows")),
        "checksum": checksum,
        **stats,
    }


def _curated_positives(
    config: PipelineConfig, meta: Metadata, corpus_ids: list[str]
) -> list[TableRow] | None:
    """Hand-curated positives when they align with the current schema."""
    path = Path(config.positives_path) if config.positives_path else default_positives_path()
    if not path.exists():
        return None
    from .store import load_artifact

    try:
        rows = load_artifact("rows", path, meta=meta)
    except StoreError as exc:
        log.warning("curated positives unusable (%s); falling back to builder rows", exc)
        return None
    by_id = {r.conversation_id: r for r in rows}
    if set(by_id) != set(corpus_ids):
        log.warning("curated positives do not cover the corpus; falling back to builder rows")
        return None
    for row in rows:
        if row.metadata_version != meta.version:
            log.warning(
                "curated positives were built for schema version %d (current %d); "
                "falling back to builder rows",
                row.metadata_version,
                meta.version,
            )
            return None
    return [by_id[cid] for cid in corpus_ids]


def stage_make_prefs(run_dir: str | Path, config: PipelineConfig) -> dict:
    store = _store(run_dir)
    manifest = _manifest(store, config)
    conversations = _load_corpus_for(store, config)
    meta = _load_meta(store, config)
    builder_rows = store.load("rows", meta=meta)

    corpus_ids = [c.id for c in conversations]
    positives = _curated_positives(config, meta, corpus_ids)
    source = "curated"
    if positives is None:
        positives = builder_rows
        source = "builder"

    pairs = build_preference_set(
        positives,
        conversations,
        seed=config.seed,
        config=PerturbConfig(
            drop_rate=config.drop_rate,
            noise_rate=config.noise_rate,
            swap_pairs=config.swap_pairs,
        ),
    )
    pairs_checksum = store.save("pairs", pairs, manifest)
    csv_checksum = store.save("structure_bad", pairs, manifest)
    manifest.extras["positives_source"] = source
    store.write_manifest(manifest)
    return {
        "artifact": "pairs",
        "path": str(store.artifact_path("pairs")),
        "checksum": pairs_checksum,
        "csv_path": str(store.artifact_path("structure_bad")),
        "csv_checksum": csv_checksum,
        "n_pairs": len(pairs),
        "positives_source": source,
    }


def stage_index(run_dir: str | Path, config: PipelineConfig) -> dict:
    store = _store(run_dir)
    manifest = _manifest(store, config)
    conversations = _load_corpus_for(store, config)
    meta = _load_meta(store, config)
    rows = store.load("rows", meta=meta)
    gateway = build_gateway(config)

    index = build_index(rows, conversations, meta, gateway.embedder)
    checksum = store.save("index", index, manifest)
    store.write_manifest(manifest)
    return {
        "artifact": "index",
        "path": str(store.artifact_path("index")),
        "checksum": checksum,
        "n_docs": len(index.docs),
    }


def _ask(
    query: str,
    *,
    index,
    rows: Sequence[TableRow],
    meta: Metadata,
    gateway: Gateway,
    config: PipelineConfig,
    baseline: bool = False,
) -> tuple[Answer, EvidenceBundle]:
    kinds = {"conversation"} if baseline else None
    bundle = collect_evidence(
        query,
        index,
        rows,
        meta,
        gateway.embedder,
        k=config.top_k,
        max_depth=0 if baseline else config.max_depth,
        evidence_budget=config.evidence_budget,
        kinds=kinds,
        row_weight=config.row_weight,
    )
    docs = []
    for doc_id, _score in bundle.ranked_docs:
        doc = index.get(doc_id)
        if doc is not None:
            docs.append((doc_id, doc.rendering))
    answer = generate_answer(
        query, docs, bundle.triples, gateway, token_budget=config.token_budget
    )
    return answer, bundle


def stage_ask(run_dir: str | Path, query: str, config: PipelineConfig) -> dict:
    store = _store(run_dir)
    meta = _load_meta(store, config)
    rows = store.load("rows", meta=meta)
    index = store.load("index")
    gateway = build_gateway(config)
    answer, bundle = _ask(
        query, index=index, rows=rows, meta=meta, gateway=gateway, config=config
    )
    return {
        "answer": answer.to_dict(),
        "ranked_docs": [[doc_id, score] for doc_id, score in bundle.ranked_docs],
        "n_triples": len(bundle.triples),
    }


def _eval_artifacts(
    store: RunStore, config: PipelineConfig, mode: str
) -> tuple[Metadata, list[TableRow], Any]:
    """Artifacts to evaluate under `mode`; ablations rebuild in memory so the
    stored run is left untouched."""
    conversations = _load_corpus_for(store, config)
    if mode in ("full", "baseline"):
        meta = _load_meta(store, config)
        rows = store.load("rows", meta=meta)
        index = store.load("index")
        return meta, rows, index

    ablated = config.with_overrides({"ablations": {mode}})
    gateway = build_gateway(ablated)
    if mode == "no_metadata":
        inducer = SchemaInducer(gateway, capacity=ablated.capacity)
        meta = _union_candidates(inducer, conversations, ablated)
    else:
        meta = _load_meta(store, config)
    rows, _stats = _build_rows(conversations, meta, gateway, ablated)
    index = build_index(rows, conversations, meta, gateway.embedder)
    return meta, rows, index


def stage_eval(
    run_dir: str | Path, gold_path: str | Path, config: PipelineConfig, mode: str = "full"
) -> dict:
    """Retrieval + answering over the gold queries, plus table quality."""
    if mode not in EVAL_MODES:
        raise PipelineError(f"unknown eval mode {mode!r}; expected one of {EVAL_MODES}")
    store = _store(run_dir)
    manifest = _manifest(store, config)
    gold = load_gold(gold_path)
    conversations = _load_corpus_for(store, config)
    meta, rows, index = _eval_artifacts(store, config, mode)
    gateway = build_gateway(config)

    judgments: list[QueryJudgment] = []
    correctness_scores: list[float] = []
    for gq in gold:
        answer, bundle = _ask(
            gq.query,
            index=index,
            rows=rows,
            meta=meta,
            gateway=gateway,
            config=config,
            baseline=(mode == "baseline"),
        )
        judgments.append(
            QueryJudgment(
                query_id=gq.query_id,
                relevant_ids=gq.relevant_ids,
                retrieved_top3=retrieved_conversation_ids(bundle.ranked_docs),
            )
        )
        evidence = "\n".join(t.info for t in bundle.triples)
        correctness_scores.append(
            judge_correctness(
                gq.query, answer.text, evidence, gateway, gold_keywords=gq.gold_keywords
            )
        )

    probes = [gq.query for gq in gold]
    report = EvalReport(
        mode=mode,
        recall_at_3=recall_at_3(judgments),
        mrr_at_3=mrr_at_3(judgments),
        correctness=sum(correctness_scores) / len(correctness_scores),
        structural_compliance=structural_compliance(meta),
        metadata_effectiveness=metadata_effectiveness(meta, rows, probes, gateway.embedder),
        constraint_satisfaction=constraint_satisfaction(rows, meta),
        semantic_correctness=semantic_correctness(rows, conversations, gateway),
        n_queries=len(gold),
        n_tables=len(rows),
    )
    checksum = store.save("report", report, manifest)
    store.write_manifest(manifest)
    return {
        "artifact": "report",
        "path": str(store.artifact_path("report")),
        "checksum": checksum,
        "report": report.to_dict(),
        "text_table": report.text_table(),
    }


def stage_export_prefs(run_dir: str | Path, dest_dir: str | Path) -> dict:
    """Copy the preference artifacts somewhere a trainer can consume them."""
    store = _store(run_dir)
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    exported = {}
    for kind in ("pairs", "structure_bad"):
        src = store.artifact_path(kind)
        if not src.exists():
            raise StoreError(f"missing artifact: {kind} (run make-prefs first)")
        target = dest / src.name
        shutil.copyfile(src, target)
        exported[kind] = str(target)
    return {"exported": exported}
