from __future__ import annotations

import logging
import math
import random

import pytest

from sarag.corpus import Conversation, SpeakerRole, Turn
from sarag.mocks import MockEmbedder
from sarag.retrieval import (
    EvidenceState,
    RetrievalError,
    VectorIndex,
    build_index,
    collect_evidence,
    expand,
    index_from_json,
    index_to_json,
    render_row,
    score_relations,
    should_terminate,
    tail,
)
from sarag.schema import ColumnSpec, Metadata
from sarag.tables import CellValue, TableRow


def make_conv(conv_id, text):
    return Conversation(id=conv_id, turns=(Turn(SpeakerRole.USER, text),))


def make_row(conv_id, values):
    return TableRow(
        conversation_id=conv_id,
        metadata_version=1,
        cells={k: CellValue(column=k, value=v) for k, v in values.items()},
    )


def brute_force_topk(embedder, query, docs, k):
    """Independent oracle: exhaustive exact cosine over the stored unit
    vectors, full sort with doc_id tie-break.

    Stored vectors are unit-norm (asserted), so the cosine equals the dot
    product; math.fsum makes the sum exactly rounded regardless of iteration
    order, which pins tie behavior bitwise.
    """
    query_vec = embedder.embed(query).values
    query_is_zero = not any(query_vec)
    scored = []
    for doc in docs:
        values = doc.vector.values
        doc_is_zero = not any(values)
        if not doc_is_zero:
            assert abs(math.fsum((values * values).tolist()) - 1.0) < 1e-9
        if query_is_zero or doc_is_zero:
            score = 0.0
        else:
            products = [float(query_vec[i]) * float(values[i]) for i in reversed(range(len(values)))]
            score = math.fsum(products)
        scored.append((doc.doc_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


WORDS = [
    "printer", "driver", "error", "update", "camera", "battery", "sync",
    "cache", "login", "network", "monitor", "keyboard", "firmware", "reset",
]


@pytest.fixture()
def simple_setup():
    meta = Metadata(
        columns=[
            ColumnSpec(name="product", dtype="string", semantic="device involved"),
            ColumnSpec(name="problem", dtype="string", semantic="reported failure"),
            ColumnSpec(name="fix", dtype="string", semantic="suggested remedy"),
        ],
        version=1,
    )
    rows = [
        make_row("a", {"product": "printer", "problem": "paper jam", "fix": "clear tray"}),
        make_row("b", {"product": "camera", "problem": "black screen", "fix": None}),
    ]
    convs = [
        make_conv("a", "My printer has a paper jam. Clear the tray."),
        make_conv("b", "The camera shows a black screen."),
    ]
    embedder = MockEmbedder(dim=128)
    index = build_index(rows, convs, meta, embedder)
    return meta, rows, convs, embedder, index


# -- rendering / index ---------------------------------------------------------


def test_render_row_joins_non_null_cells(simple_setup):
    meta, rows, *_ = simple_setup
    assert render_row(rows[0], meta) == "product: printer; problem: paper jam; fix: clear tray"
    assert render_row(rows[1], meta) == "product: camera; problem: black screen"


def test_fully_null_row_renders_table_name():
    meta = Metadata(table_name="support_cases", columns=[ColumnSpec(name="a", dtype="string")])
    row = make_row("x", {"a": None})
    assert render_row(row, meta) == "support_cases"


def test_index_has_one_doc_per_row_and_conversation(simple_setup):
    *_rest, index = simple_setup
    assert len(index.docs) == 4
    assert {d.kind for d in index.docs} == {"row", "conversation"}


def test_index_rebuild_is_identical(simple_setup):
    meta, rows, convs, embedder, index = simple_setup
    rebuilt = build_index(rows, convs, meta, embedder)
    assert index_to_json(rebuilt) == index_to_json(index)


def test_index_round_trip(simple_setup):
    *_rest, index = simple_setup
    back = index_from_json(index_to_json(index))
    assert back.to_payload() == index.to_payload()


def test_index_container_layout_is_pinned():
    # Golden layout: format_version 1, dim, then docs with exactly these keys.
    embedder = MockEmbedder(dim=8)
    meta = Metadata(columns=[ColumnSpec(name="t", dtype="string")])
    rows = [make_row("g1", {"t": "alpha"})]
    payload = build_index(rows, [make_conv("g1", "alpha")], meta, embedder).to_payload()
    assert payload["format_version"] == 1
    assert payload["dim"] == 8
    assert [d["doc_id"] for d in payload["docs"]] == ["row:g1", "conv:g1"]
    for doc in payload["docs"]:
        assert list(doc) == ["doc_id", "kind", "rendering", "vector"]
        assert len(doc["vector"]) == 8
    with pytest.raises(RetrievalError, match="format version"):
        VectorIndex.from_payload({**payload, "format_version": 99})


def test_index_rejects_duplicate_ids(simple_setup):
    *_rest, index = simple_setup
    with pytest.raises(RetrievalError, match="duplicate"):
        VectorIndex(dim=index.dim, docs=list(index.docs) + [index.docs[0]])


# -- topk ------------------------------------------------------------------------


def test_exact_rendering_query_ranks_first(simple_setup):
    meta, rows, convs, embedder, index = simple_setup
    query = render_row(rows[0], meta)
    (top_id, top_score), *_ = index.topk(embedder.embed(query), 1)
    assert top_id == "row:a"
    assert top_score == pytest.approx(1.0)


def test_k_larger_than_index_returns_all(simple_setup):
    embedder, index = simple_setup[3], simple_setup[4]
    results = index.topk(embedder.embed("printer"), 1000)
    assert len(results) == len(index.docs)


def test_tie_order_is_doc_id_lexicographic():
    embedder = MockEmbedder(dim=64)
    meta = Metadata(columns=[ColumnSpec(name="t", dtype="string")])
    rows = [make_row("zz", {"t": "same text"}), make_row("aa", {"t": "same text"})]
    index = build_index(rows, [], meta, embedder)
    results = index.topk(embedder.embed("t: same text"), 2)
    assert [doc_id for doc_id, _ in results] == ["row:aa", "row:zz"]
    assert results[0][1] == results[1][1]


def test_empty_index_rejected():
    index = VectorIndex(dim=8, docs=[])
    with pytest.raises(RetrievalError, match="empty"):
        index.topk(MockEmbedder(dim=8).embed("q"), 3)


def test_topk_matches_brute_force_on_random_instances():
    rng = random.Random(20240917)
    embedder = MockEmbedder(dim=64)
    for _trial in range(100):
        n_docs = rng.randint(2, 24)
        texts = [
            " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 8)))
            for _ in range(n_docs)
        ]
        # Duplicated texts force exact ties.
        if n_docs > 3 and rng.random() < 0.5:
            texts[1] = texts[0]
        meta = Metadata(columns=[ColumnSpec(name="t", dtype="string")])
        rows = [make_row(f"d{i:03d}", {"t": text}) for i, text in enumerate(texts)]
        index = build_index(rows, [], meta, embedder)
        query = " ".join(rng.choice(WORDS) for _ in range(3))
        k = rng.randint(1, n_docs)
        expected = brute_force_topk(embedder, query, index.docs, k)
        actual = index.topk(embedder.embed(query), k)
        assert [d for d, _ in actual] == [d for d, _ in expected]
        for (_, got), (_, want) in zip(actual, expected):
            assert got == pytest.approx(want, abs=1e-12)


def test_kind_filter(simple_setup):
    embedder, index = simple_setup[3], simple_setup[4]
    only_convs = index.topk(embedder.embed("printer"), 10, kinds={"conversation"})
    assert all(doc_id.startswith("conv:") for doc_id, _ in only_convs)


def test_fusion_weight_rescales_row_scores(simple_setup):
    embedder, index = simple_setup[3], simple_setup[4]
    query = embedder.embed("printer paper jam")
    unweighted = index.topk(query, 4)
    assert unweighted[0][0].startswith("row:")
    buried = index.topk(query, 4, kind_weights={"row": 0.0})
    assert all(not doc_id.startswith("row:") for doc_id, _ in buried[:2])
    assert index.topk(query, 4, kind_weights={"row": 1.0}) == unweighted


# -- tail ---------------------------------------------------------------------------


def test_tail_returns_rendered_cell(simple_setup):
    _meta, rows, *_ = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    assert tail(("row:a", "product"), "fix", rows_by_doc) == "clear tray"


def test_tail_null_cell_is_none(simple_setup):
    _meta, rows, *_ = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    assert tail(("row:b", "product"), "fix", rows_by_doc) is None


def test_tail_unknown_column_is_none_with_warning(simple_setup, caplog):
    _meta, rows, *_ = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    with caplog.at_level(logging.WARNING):
        assert tail(("row:a", "product"), "ghost_column", rows_by_doc) is None
    assert any("absent" in r.message for r in caplog.records)


def test_tail_non_row_doc_rejected(simple_setup):
    _meta, rows, *_ = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    with pytest.raises(RetrievalError):
        tail(("conv:a", "product"), "fix", rows_by_doc)


# -- relation scoring / expansion -----------------------------------------------------


def test_all_relations_activated_scores_empty(simple_setup):
    meta, embedder = simple_setup[0], simple_setup[3]
    state = EvidenceState(activated_relations=frozenset(meta.column_names()))
    assert score_relations(state, "anything", meta, embedder) == []


def test_query_naming_a_column_ranks_it_first(simple_setup):
    meta, embedder = simple_setup[0], simple_setup[3]
    ranked = score_relations(EvidenceState(), "what is the fix remedy", meta, embedder)
    assert ranked[0] == "fix"


def test_relation_ranking_is_stable(simple_setup):
    meta, embedder = simple_setup[0], simple_setup[3]
    a = score_relations(EvidenceState(), "query", meta, embedder)
    b = score_relations(EvidenceState(), "query", meta, embedder)
    assert a == b


def test_expand_grows_info_by_tail_lookups(simple_setup):
    meta, rows, _convs, embedder, _index = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    from sarag.retrieval import ActiveValue

    state = EvidenceState(
        active_values=(ActiveValue("row:a", "product", "printer"),),
    )
    new = expand(state, "what is the fix", rows_by_doc, meta, embedder)
    assert new.step == 1
    assert len(new.info) == 1
    assert new.info[0] == "clear tray"
    assert new.triples[0].value == "printer"
    assert new.triples[0].relation == "fix"


def test_expand_with_no_relations_is_terminal(simple_setup):
    meta, rows, _convs, embedder, _index = simple_setup
    rows_by_doc = {f"row:{r.conversation_id}": r for r in rows}
    state = EvidenceState(activated_relations=frozenset(meta.column_names()))
    new = expand(state, "q", rows_by_doc, meta, embedder)
    assert new.terminal


def test_expansion_never_repeats_a_lookup(monkeypatch, simple_setup):
    meta, rows, convs, embedder, index = simple_setup
    lookups = []
    import sarag.retrieval as retrieval_mod

    original_tail = retrieval_mod.tail

    def counting_tail(value_ref, relation, rows_by_doc):
        lookups.append((value_ref[0], relation))
        return original_tail(value_ref, relation, rows_by_doc)

    monkeypatch.setattr(retrieval_mod, "tail", counting_tail)
    rng = random.Random(7)
    for _ in range(20):
        lookups.clear()
        query = " ".join(rng.choice(WORDS) for _ in range(3))
        collect_evidence(query, index, rows, meta, embedder, k=2, max_depth=3, evidence_budget=10)
        assert len(lookups) == len(set(lookups))


# -- termination -----------------------------------------------------------------------


def test_terminate_on_depth():
    state = EvidenceState(step=3)
    assert should_terminate(state, max_depth=3, evidence_budget=10)


def test_fresh_state_does_not_terminate():
    assert not should_terminate(EvidenceState(), max_depth=3, evidence_budget=10)


def test_terminate_on_budget():
    state = EvidenceState(info=tuple(f"i{i}" for i in range(10)))
    assert should_terminate(state, max_depth=3, evidence_budget=10)


# -- collect_evidence ---------------------------------------------------------------------


def test_max_depth_zero_uses_initial_state_only(simple_setup):
    meta, rows, _convs, embedder, index = simple_setup
    bundle = collect_evidence(
        "printer paper jam", index, rows, meta, embedder, k=1, max_depth=0, evidence_budget=10
    )
    # Initial triples only: the top row's non-null cells.
    assert [t.relation for t in bundle.triples] == ["product", "problem", "fix"]
    assert all(t.info == t.value for t in bundle.triples)


def test_collect_evidence_is_deterministic(simple_setup):
    meta, rows, _convs, embedder, index = simple_setup
    a = collect_evidence("camera black screen", index, rows, meta, embedder, k=2)
    b = collect_evidence("camera black screen", index, rows, meta, embedder, k=2)
    assert a.ranked_docs == b.ranked_docs
    assert [t.to_dict() for t in a.triples] == [t.to_dict() for t in b.triples]


def test_triples_reference_schema_relations(simple_setup):
    meta, rows, _convs, embedder, index = simple_setup
    bundle = collect_evidence("printer", index, rows, meta, embedder, k=2)
    names = set(meta.column_names())
    assert bundle.triples
    for triple in bundle.triples:
        assert triple.relation in names


def test_conversation_only_mode_has_no_triples(simple_setup):
    meta, rows, _convs, embedder, index = simple_setup
    bundle = collect_evidence(
        "printer", index, rows, meta, embedder, k=2, kinds={"conversation"}
    )
    assert bundle.triples == []
    assert all(doc_id.startswith("conv:") for doc_id, _ in bundle.ranked_docs)
