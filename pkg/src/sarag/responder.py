"""Grounded answer generation with closed-world citations.

The respond prompt serializes the evidence triples first, then the top
document renderings (truncated to a token budget), and demands a trailing
machine-parseable `sources:` line.  Citations referencing evidence that was
never supplied are stripped.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from .gateway import Gateway
from .retrieval import EvidenceTriple

log = logging.getLogger(__name__)

NO_EVIDENCE_ANSWER = "I could not find enough recorded evidence to answer this question."

_SOURCES_RE = re.compile(
    r"^sources:\s*docs=\[(?P<docs>[^\]]*)\]\s*triples=\[(?P<triples>[^\]]*)\]\s*$",
    re.MULTILINE,
)


@dataclass
class Answer:
    text: str
    cited_doc_ids: list[str] = field(default_factory=list)
    cited_triples: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "cited_doc_ids": list(self.cited_doc_ids),
            "cited_triples": list(self.cited_triples),
        }


def _truncate_tokens(text: str, budget: int) -> str:
    tokens = text.split(" ")
    if len(tokens) <= budget:
        return text
    return " ".join(tokens[:budget])


def serialize_evidence(
    docs: Sequence[tuple[str, str]], triples: Sequence[EvidenceTriple], token_budget: int
) -> tuple[str, str]:
    """Render triples (indexed) and documents (id :: rendering), truncated."""
    triple_lines = [
        f"{i}. {t.value} | {t.relation} | {t.info}" for i, t in enumerate(triples)
    ]
    doc_lines = [f"{doc_id} :: {rendering}" for doc_id, rendering in docs]
    return (
        _truncate_tokens("\n".join(triple_lines), token_budget),
        _truncate_tokens("\n".join(doc_lines), token_budget),
    )


def parse_citations(text: str) -> tuple[str, list[str], list[int]]:
    """Split the answer body from the `sources:` trailer.

    An unparseable trailer yields empty citations with a warning.
    """
    match = _SOURCES_RE.search(text)
    if not match:
        log.warning("answer missing a parseable 'sources:' trailer; citations empty")
        return text.strip(), [], []
    body = (text[: match.start()] + text[match.end():]).strip()
    doc_ids = [d.strip() for d in match.group("docs").split(";") if d.strip()]
    triples = []
    for part in match.group("triples").split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            triples.append(int(part))
        except ValueError:
            log.warning("ignoring non-integer triple citation %r", part)
    return body, doc_ids, triples


def generate_answer(
    query: str,
    docs: Sequence[tuple[str, str]],
    triples: Sequence[EvidenceTriple],
    gateway: Gateway,
    *,
    token_budget: int = 3000,
) -> Answer:
    """One completion over (query, docs, triples); enforces that citations
    only reference supplied evidence.  Empty evidence short-circuits to a
    fixed no-evidence answer."""
    if not docs and not triples:
        return Answer(text=NO_EVIDENCE_ANSWER)

    triples_blob, docs_blob = serialize_evidence(docs, triples, token_budget)
    text = gateway.complete_template(
        "respond",
        {"query": query, "triples": triples_blob, "documents": docs_blob},
    )
    body, doc_ids, triple_ids = parse_citations(text)

    known_docs = {doc_id for doc_id, _ in docs}
    kept_docs = []
    for doc_id in doc_ids:
        if doc_id in known_docs:
            kept_docs.append(doc_id)
        else:
            log.warning("stripping citation of unknown doc %r", doc_id)
    kept_triples = []
    for idx in triple_ids:
        if 0 <= idx < len(triples):
            kept_triples.append(idx)
        else:
            log.warning("stripping citation of unknown triple index %d", idx)
    return Answer(text=body, cited_doc_ids=kept_docs, cited_triples=kept_triples)
