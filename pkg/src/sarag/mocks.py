"""Deterministic offline providers: mock completion, file-backed completion,
and a hashed bag-of-words embedder.

The mock completion provider is a pure function of `(template_id, bindings)`:
it first consults a fixtures lookup keyed by a stable bindings digest, then
falls back to a per-template synthesizer.  Synthesizers derive everything
from the bindings, so full pipeline runs are bit-reproducible without any
network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .gateway import (
    CompletionRequest,
    EmbeddingVector,
    GatewayError,
    parse_json_payload,
)
from .schema import ColumnSpec, Metadata, SchemaError, normalize_metadata
from .textutil import jaccard, token_set, tokenize

log = logging.getLogger(__name__)

GENERIC_FALLBACK = '{"note": "mock fallback", "detail": "no fixture for this prompt"}'

_STOPWORDS = frozenset(
    """a about after again all am an and any are as at be because been but by can
    did do does for from get got had has have he her hi him his how i if in into
    is it its just me my no not now of off on or our out please so than thanks
    that the their them then there these they this to too up us was we were what
    when which who will with would you your""".split()
)


def bindings_key(bindings: Mapping[str, str]) -> str:
    """Stable 16-hex digest of a bindings map; the fixtures lookup key."""
    blob = json.dumps(
        {str(k): str(v) for k, v in bindings.items()},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


class MockEmbedder:
    """Hashed bag-of-words embedding: token counts in `dim` buckets, L2-normalized.

    Deterministic across processes (bucket assignment uses sha256, not the
    salted builtin hash).  Empty text maps to the zero vector.
    """

    name = "mock"

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("embedding dim must be positive")
        self.dim = dim

    def bucket_of(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dim, dtype=np.float64)
        tokens = tokenize(text)
        if not tokens:
            return EmbeddingVector(values=values, normalized=True)
        for token in tokens:
            values[self.bucket_of(token)] += 1.0
        values /= np.linalg.norm(values)
        return EmbeddingVector(values=values, normalized=True)


# ---------------------------------------------------------------------------
# Fallback synthesizers, one per template
# ---------------------------------------------------------------------------


def _content_tokens(text: str) -> list[str]:
    counts: dict[str, int] = {}
    for token in tokenize(text):
        if token in _STOPWORDS or len(token) < 3 or not token[0].isalpha():
            continue
        counts[token] = counts.get(token, 0) + 1
    return [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]

_BASE_COLUMNS: list[tuple[str, str, str, list[str]]] = [
    ("issue_title", "string", "short label of the reported problem", ["not null"]),
    ("issue_description", "string", "full description of the problem as reported", []),
    ("product_name", "string", "commercial name of the software or device involved", []),
    ("operating_system", "string", "operating system named in the report", []),
    ("error_code", "string", "error code or update identifier quoted in the report", []),
    ("error_count", "int", "count of errors or occurrences mentioned", []),
    ("reported_date", "date", "calendar date the problem was reported or observed", []),
    ("symptom_summary", "string", "observable symptom described by the reporter", []),
    ("resolution_steps", "string", "steps the agent suggested to resolve the problem", []),
    ("resolution_status", "string", "whether the problem was resolved", []),
]


def _fallback_extract_schema(bindings: Mapping[str, str]) -> str:
    dialog = bindings.get("dialog", "")
    frequent = [t for t in _content_tokens(dialog) if re.match(r"^[a-z][a-z0-9]*$", t)]
    extras = (frequent + ["case", "detail"])[:2]
    columns = [
        {"name": name, "type": dtype, "semantic": semantic, "constraints": cons, "Note": ""}
        for name, dtype, semantic, cons in _BASE_COLUMNS
    ]
    for token in extras:
        columns.append(
            {
                "name": f"{token}_detail",
                "type": "string",
                "semantic": f"mentions {token}",
                "constraints": [],
                "Note": "",
            }
        )
    payload = [
        {
            "table_name": "support_cases",
            "Columns": columns,
            "functional_denpendencies": [],
            "version": 0,
        }
    ]
    return json.dumps(payload, ensure_ascii=False)


def _fallback_normalize_schema(bindings: Mapping[str, str]) -> str:
    try:
        raw, _ = parse_json_payload(bindings.get("raw_schema", ""))
        meta = normalize_metadata(Metadata.from_persist(raw))
        return json.dumps(meta.to_persist(), ensure_ascii=False)
    except (GatewayError, SchemaError):
        return json.dumps(Metadata().to_persist(), ensure_ascii=False)


def _overlap(needles: set[str], haystack: set[str]) -> float:
    if not needles:
        return 0.0
    return len(needles & haystack) / len(needles)


def _fallback_quality_check(bindings: Mapping[str, str]) -> str:
    """Token-overlap scorer: exact duplicates of current columns score 1.0;
    otherwise relevance tracks overlap with the problem text and
    answerability gets a well-formedness floor."""
    try:
        current, _ = parse_json_payload(bindings.get("current_meta_data", "[]"))
        current_names = set(Metadata.from_persist(current).column_names())
    except (GatewayError, SchemaError):
        current_names = set()
    try:
        candidate_payload, _ = parse_json_payload(bindings.get("new_schema", "[]"))
        candidate = Metadata.from_persist(candidate_payload)
    except (GatewayError, SchemaError):
        candidate = Metadata()
    problem_tokens = token_set(bindings.get("problem", ""))

    scored_columns = []
    for col in candidate.columns:
        entry = {
            "name": col.name,
            "type": col.dtype,
            "semantic": col.semantic,
            "constraints": list(col.constraints),
            "Note": col.note,
        }
        if col.name in current_names:
            entry["quality_score"] = {
                "relevance": 1.0,
                "answerability": 1.0,
                "overall": 1.0,
                "justification": "exact duplicate",
            }
        else:
            name_tokens = token_set(col.name.replace("_", " ")) | token_set(col.semantic)
            relevance = round(jaccard(name_tokens, problem_tokens), 4)
            sem_overlap = _overlap(token_set(col.semantic), problem_tokens)
            answerability = round(0.7 + 0.3 * sem_overlap, 4)
            overall = round(0.5 * relevance + 0.5 * answerability, 4)
            entry["quality_score"] = {
                "relevance": relevance,
                "answerability": answerability,
                "overall": overall,
                "justification": f"token overlap {relevance:.4f}",
            }
        scored_columns.append(entry)
    return json.dumps({"Columns": scored_columns}, ensure_ascii=False)


def _name_tokens(name: str) -> set[str]:
    return set(name.split("_"))


def _covers_mock(existing: ColumnSpec, cand: ColumnSpec) -> bool:
    if existing.name == cand.name:
        return True
    return jaccard(token_set(existing.semantic), token_set(cand.semantic)) >= 0.5


def _fallback_governance(bindings: Mapping[str, str]) -> str:
    """Proposal builder: keep current columns; fold candidates in by quality,
    refining name-superset columns in place, skipping semantic duplicates,
    and trimming appended candidates past 20 columns."""
    try:
        current_payload, _ = parse_json_payload(bindings.get("current_meta_data", "[]"))
        current = Metadata.from_persist(current_payload)
    except (GatewayError, SchemaError):
        current = Metadata()
    try:
        annotated, _ = parse_json_payload(bindings.get("quality_annotated_schema", "[]"))
    except GatewayError:
        annotated = []

    raw_cols = annotated.get("Columns", []) if isinstance(annotated, dict) else annotated
    candidates: list[tuple[ColumnSpec, float]] = []
    if isinstance(raw_cols, list):
        for raw in raw_cols:
            if not isinstance(raw, dict):
                continue
            try:
                col = ColumnSpec.from_dict(raw).normalized()
            except SchemaError:
                continue
            score = raw.get("quality_score", {})
            overall = score.get("overall", 0.0) if isinstance(score, dict) else 0.0
            try:
                overall = max(0.0, min(1.0, float(overall)))
            except (TypeError, ValueError):
                overall = 0.0
            candidates.append((col, overall))

    proposal: list[ColumnSpec] = [c for c in current.columns]
    appended: list[tuple[str, float]] = []
    for col, overall in sorted(candidates, key=lambda cs: (-cs[1], cs[0].name)):
        names = {c.name for c in proposal}
        if col.name in names:
            continue
        refined = [
            p for p in proposal if _name_tokens(p.name) < _name_tokens(col.name)
        ]
        if refined and overall >= 0.3:
            proposal[proposal.index(refined[0])] = col
            continue
        if any(_covers_mock(p, col) for p in proposal):
            continue
        if overall >= 0.3:
            proposal.append(col)
            appended.append((col.name, overall))

    while len(proposal) > 20 and appended:
        appended.sort(key=lambda kv: (kv[1], kv[0]))
        drop_name, _ = appended.pop(0)
        proposal = [c for c in proposal if c.name != drop_name]

    final = Metadata(
        table_name=current.table_name,
        columns=proposal,
        functional_dependencies=list(current.functional_dependencies),
        version=current.version,
    )
    return json.dumps(final.to_persist(), ensure_ascii=False)


_PRODUCT_RE = re.compile(r"\b[A-Z][a-z]+[A-Z][a-zA-Z]*\b|\b[A-Z][a-zA-Z]*(?: [A-Z0-9][a-zA-Z0-9]*)+\b")
_OS_RE = re.compile(r"\bWindows \d+\b|\bWindows\b|\bmacOS\b|\bAndroid\b|\biOS\b|\bLinux\b|\bMobile OS\b")
_ERROR_CODE_RE = re.compile(r"\b0x[0-9A-Fa-f]+\b|\bKB\d+\b|\b[A-Z][A-Z_]{5,}\b")
_INT_RE = re.compile(r"(?<![\w.])\d{1,9}(?![\w.])")
_FLOAT_RE = re.compile(r"(?<![\w.])\d+\.\d+(?![\w.])")
_DATE_RE = re.compile(r"\b\d{4}-\d{2}-\d{2}\b(?!T)")
_DATETIME_RE = re.compile(r"\b\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\b")


def _clip_fragment(text: str, limit: int) -> str:
    text = text.strip()
    if len(text) <= limit:
        return text
    cut = text.rfind(" ", 0, limit)
    return text[: cut if cut > 0 else limit].strip()


def _sentences_by_turn(dialogue: str) -> list[str]:
    sentences: list[str] = []
    for line in dialogue.splitlines():
        body = line.split(": ", 1)[1] if ": " in line else line
        for part in re.split(r"(?<=[.?!])\s+", body):
            part = part.strip()
            if part:
                sentences.append(part)
    return sentences


def _first_sentence_with(tokens: set[str], sentences: list[str]) -> str | None:
    for sentence in sentences:
        if token_set(sentence) & tokens:
            return _clip_fragment(sentence, 100)
    return None


def _fallback_generate_row(bindings: Mapping[str, str]) -> str:
    """Heuristic row synthesizer.  Values are always contiguous fragments of
    the dialogue (or literal matches in it), so the substring-based semantic
    judge accepts what this synthesizer emits."""
    dialogue = bindings.get("dialogue", "")
    try:
        meta_payload, _ = parse_json_payload(bindings.get("meta_data", "[]"))
        meta = Metadata.from_persist(meta_payload)
    except (GatewayError, SchemaError):
        meta = Metadata()

    sentences = _sentences_by_turn(dialogue)
    user_lines = [ln.split(": ", 1)[1] for ln in dialogue.splitlines() if ln.startswith("user: ")]
    first_user = user_lines[0] if user_lines else (sentences[0] if sentences else "")
    agent_lines = [ln.split(": ", 1)[1] for ln in dialogue.splitlines() if ln.startswith("agent: ")]

    row: dict[str, Any] = {}
    for col in meta.columns:
        value: Any = None
        if col.dtype == "int":
            match = _INT_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.dtype == "float":
            match = _FLOAT_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.dtype == "date":
            match = _DATE_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.dtype == "datetime":
            match = _DATETIME_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.dtype == "boolean":
            lowered = dialogue.lower()
            if "resolved" in lowered or "fixed" in lowered:
                value = "true"
            elif "unresolved" in lowered:
                value = "false"
        elif col.name == "issue_title":
            value = _clip_fragment(re.split(r"(?<=[.?!])\s+", first_user)[0], 100) if first_user else None
        elif col.name == "issue_description":
            value = _clip_fragment(first_user, 200) if first_user else None
        elif col.name == "symptom_summary":
            parts = re.split(r"(?<=[.?!])\s+", first_user) if first_user else []
            value = _clip_fragment(parts[1], 100) if len(parts) > 1 else (_clip_fragment(parts[0], 100) if parts else None)
        elif col.name == "resolution_steps":
            value = _clip_fragment(agent_lines[0], 160) if agent_lines else None
        elif col.name == "resolution_status":
            lowered = dialogue.lower()
            for status in ("unresolved", "resolved", "fixed"):
                if status in lowered:
                    value = status
                    break
        elif col.name == "product_name":
            match = _PRODUCT_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.name == "operating_system":
            match = _OS_RE.search(dialogue)
            value = match.group(0) if match else None
        elif col.name == "error_code":
            match = _ERROR_CODE_RE.search(dialogue)
            value = match.group(0) if match else None
        else:
            keys = _name_tokens(col.name) - {"detail", "summary", "status", "name"}
            value = _first_sentence_with(keys, sentences)
            if value is None:
                value = _first_sentence_with(token_set(col.semantic) - _STOPWORDS, sentences)
        row[col.name] = value
    return json.dumps({"row": row}, ensure_ascii=False)


def _fallback_judge_table(bindings: Mapping[str, str]) -> str:
    try:
        table, _ = parse_json_payload(bindings.get("dialogue", ""))
        meta = Metadata.from_persist(parse_json_payload(bindings.get("meta_data", "[]"))[0])
    except (GatewayError, SchemaError):
        return "Satisfy the metadata: no. The table could not be parsed."
    cells = table.get("row", table) if isinstance(table, dict) else {}
    missing = [
        col.name
        for col in meta.columns
        if col.has_constraint("not null") and cells.get(col.name) is None
    ]
    if missing:
        return f"Satisfy the metadata: no. Missing required columns: {', '.join(missing)}."
    return "Satisfy the metadata: yes."


def _fallback_judge_semantic(bindings: Mapping[str, str]) -> str:
    """Substring oracle: a value is supported iff it appears case-insensitively
    in the dialogue text."""
    dialogue = bindings.get("dialogue", "").lower()
    try:
        cells, _ = parse_json_payload(bindings.get("cells", "{}"))
    except GatewayError:
        cells = {}
    verdicts = {}
    if isinstance(cells, dict):
        for name, value in cells.items():
            rendered = str(value).lower()
            verdicts[name] = "yes" if rendered and rendered in dialogue else "no"
    return json.dumps({"verdicts": verdicts}, ensure_ascii=False)


def _fallback_judge_correctness(bindings: Mapping[str, str]) -> str:
    """Keyword-recall oracle thresholded at 0.5, yielding a 0/1 score."""
    answer = bindings.get("answer", "").lower()
    raw_keywords = bindings.get("gold_keywords", "")
    try:
        keywords, _ = parse_json_payload(raw_keywords)
        if not isinstance(keywords, list):
            keywords = [str(keywords)]
    except GatewayError:
        keywords = [k.strip() for k in raw_keywords.split(",") if k.strip()]
    keywords = [str(k).lower() for k in keywords if str(k).strip()]
    if not keywords or not answer.strip():
        recall = 0.0
    else:
        recall = sum(1 for k in keywords if k in answer) / len(keywords)
    score = 1 if recall >= 0.5 else 0
    return json.dumps({"score": score, "justification": f"keyword recall {recall:.2f}"})


def _fallback_respond(bindings: Mapping[str, str]) -> str:
    """Echo the evidence triple that best overlaps the query, with citations."""
    query_tokens = token_set(bindings.get("query", ""))
    triples = [ln for ln in bindings.get("triples", "").splitlines() if ln.strip()]
    documents = [ln for ln in bindings.get("documents", "").splitlines() if ln.strip()]
    doc_ids = [ln.split(" :: ", 1)[0].strip() for ln in documents if " :: " in ln]
    if not triples and not doc_ids:
        return "I could not find enough recorded evidence to answer.\nsources: docs=[] triples=[]"
    parts = []
    cited_triples = ""
    if triples:
        best_index = 0
        best_score = -1
        for i, line in enumerate(triples):
            info = line.split(" | ")[-1] if " | " in line else line
            score = len(query_tokens & token_set(info))
            if score > best_score:
                best_index, best_score = i, score
        best = triples[best_index]
        fact = best.split(" | ")[-1] if " | " in best else best
        parts.append(f"Based on the recorded cases: {fact.strip()}")
        cited_triples = str(best_index)
    elif documents:
        best_line = max(
            documents,
            key=lambda ln: (len(query_tokens & token_set(ln.split(" :: ", 1)[-1])), ln),
        )
        snippet = " ".join(best_line.split(" :: ", 1)[-1].split()[:40])
        parts.append(f"From the recorded conversation: {snippet}")
    if doc_ids:
        parts.append(f"See case record {doc_ids[0]}.")
    cited_docs = ";".join(doc_ids[:1])
    return " ".join(parts) + f"\nsources: docs=[{cited_docs}] triples=[{cited_triples}]"


_FALLBACKS = {
    "extract_schema": _fallback_extract_schema,
    "normalize_schema": _fallback_normalize_schema,
    "quality_check": _fallback_quality_check,
    "governance_merge": _fallback_governance,
    "generate_row": _fallback_generate_row,
    "judge_table": _fallback_judge_table,
    "judge_semantic": _fallback_judge_semantic,
    "judge_correctness": _fallback_judge_correctness,
    "respond": _fallback_respond,
}


def synthesize_fallback(template_id: str, bindings: Mapping[str, str]) -> str:
    synth = _FALLBACKS.get(template_id)
    if synth is None:
        return GENERIC_FALLBACK
    return synth(bindings)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class MockCompletionProvider:
    """Fixtures lookup keyed by `(template_id, bindings_key)`, then the
    per-template deterministic fallback.  Stateless apart from the read-only
    fixtures, hence safe for concurrent use."""

    name = "mock"
    live = False

    def __init__(self, fixtures: Mapping[str, Mapping[str, str]] | None = None):
        self.fixtures: dict[str, dict[str, str]] = {
            str(t): {str(k): str(v) for k, v in entries.items()}
            for t, entries in (fixtures or {}).items()
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "MockCompletionProvider":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload)

    def complete(self, request: CompletionRequest) -> str:
        if request.template_id is None:
            log.warning("mock provider called without a template; returning generic fallback")
            return GENERIC_FALLBACK
        seeded = self.fixtures.get(request.template_id, {}).get(bindings_key(request.bindings))
        if seeded is not None:
            return seeded
        log.info("mock provider: no fixture for template %r, using fallback", request.template_id)
        return synthesize_fallback(request.template_id, request.bindings)


class FileCompletionProvider:
    """Completions exported by an external generator, keyed per template by a
    routing binding (default `conversation_id`).  Misses fall back to the mock
    so partial exports still drive a full pipeline run."""

    name = "file"
    live = False

    def __init__(self, descriptor: Mapping[str, Any], *, base_dir: Path | None = None):
        self.lookup_binding = str(descriptor.get("lookup_binding", "conversation_id"))
        completions = descriptor.get("completions", {})
        if isinstance(completions, str):
            path = Path(completions)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            completions = json.loads(path.read_text(encoding="utf-8"))
        self.completions: dict[str, dict[str, str]] = {
            str(t): {str(k): str(v) for k, v in entries.items()}
            for t, entries in completions.items()
        }
        self.model_id = str(descriptor.get("model_id", "unknown"))
        self._mock = MockCompletionProvider()

    @classmethod
    def from_file(cls, path: str | Path) -> "FileCompletionProvider":
        path = Path(path)
        descriptor = json.loads(path.read_text(encoding="utf-8"))
        return cls(descriptor, base_dir=path.parent)

    def complete(self, request: CompletionRequest) -> str:
        if request.template_id is not None:
            key = str(request.bindings.get(self.lookup_binding, ""))
            entry = self.completions.get(request.template_id, {}).get(key)
            if entry is not None:
                return entry
        return self._mock.complete(request)


class FailingProvider:
    """Test double that always raises a transport error."""

    name = "failing"
    live = False

    def __init__(self):
        self.calls = 0

    def complete(self, request: CompletionRequest) -> str:
        self.calls += 1
        from .gateway import TransportError

        raise TransportError("simulated transport failure")
