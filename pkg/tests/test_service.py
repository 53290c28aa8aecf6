from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from sarag import pipeline
from sarag.service import create_app


@pytest.fixture()
def client():
    return TestClient(create_app())


def stage_body(run_dir, **extra):
    return {"run_dir": str(run_dir), **extra}


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_full_stage_flow(client, tmp_path):
    run = tmp_path / "run"
    corpus = str(pipeline.toy_corpus_path())
    gold = str(pipeline.toy_gold_path())

    r = client.post("/pipeline/induce", json=stage_body(run, corpus_path=corpus))
    assert r.status_code == 200, r.text
    assert r.json()["result"]["n_columns"] <= 20

    r = client.post("/pipeline/build-tables", json=stage_body(run))
    assert r.status_code == 200
    assert r.json()["result"]["n_rows"] == 20

    r = client.post("/pipeline/make-prefs", json=stage_body(run))
    assert r.status_code == 200
    assert r.json()["result"]["n_pairs"] == 20

    r = client.post("/pipeline/index", json=stage_body(run))
    assert r.status_code == 200
    assert r.json()["result"]["n_docs"] == 40

    r = client.post(
        "/ask",
        json=stage_body(run, query="How do I fix error 0x80070057 when installing PrintMaster?"),
    )
    assert r.status_code == 200
    body = r.json()
    assert "0x80070057" in body["text"] or "PrintMaster" in body["text"]
    assert body["cited_doc_ids"]

    r = client.post("/eval", json={**stage_body(run), "gold_path": gold, "mode": "full"})
    assert r.status_code == 200
    report = r.json()["result"]["report"]
    assert report["recall_at_3"] == 1.0
    assert report["mode"] == "full"

    r = client.post(
        "/pipeline/export-prefs", json={"run_dir": str(run), "dest_dir": str(tmp_path / "out")}
    )
    assert r.status_code == 200
    assert (tmp_path / "out" / "pairs.jsonl").exists()
    assert (tmp_path / "out" / "structure_bad.csv").exists()

    r = client.get("/manifest", params={"run_dir": str(run)})
    assert r.status_code == 200
    manifest = r.json()
    assert set(manifest["checksums"]) >= {"metadata", "rows", "pairs", "index", "report"}


def test_ask_before_index_is_conflict(client, tmp_path):
    run = tmp_path / "empty_run"
    r = client.post("/ask", json=stage_body(run, query="anything"))
    assert r.status_code == 409
    assert "missing artifact" in r.json()["detail"]


def test_build_tables_before_induce_is_conflict(client, tmp_path):
    run = tmp_path / "no_meta"
    r = client.post("/pipeline/build-tables", json=stage_body(run))
    assert r.status_code == 409


def test_unknown_config_key_rejected(client, tmp_path):
    r = client.post(
        "/pipeline/induce",
        json=stage_body(tmp_path / "r", corpus_path=str(pipeline.toy_corpus_path()),
                        config={"capcity": 10}),
    )
    assert r.status_code == 422


def test_out_of_range_config_rejected(client, tmp_path):
    r = client.post(
        "/pipeline/induce",
        json=stage_body(tmp_path / "r", corpus_path=str(pipeline.toy_corpus_path()),
                        config={"drop_rate": 1.5}),
    )
    assert r.status_code == 422


def test_effective_config_is_echoed(client, tmp_path):
    r = client.post(
        "/pipeline/induce",
        json=stage_body(tmp_path / "r", corpus_path=str(pipeline.toy_corpus_path()),
                        config={"capacity": 12, "seed": 5}),
    )
    assert r.status_code == 200
    effective = r.json()["effective_config"]
    assert effective["capacity"] == 12
    assert effective["seed"] == 5
    assert effective["provider"] == "mock"


def test_missing_gold_file_rejected(client, tmp_path):
    run = tmp_path / "run"
    client.post(
        "/pipeline/induce",
        json=stage_body(run, corpus_path=str(pipeline.toy_corpus_path())),
    )
    client.post("/pipeline/build-tables", json=stage_body(run))
    client.post("/pipeline/index", json=stage_body(run))
    r = client.post("/eval", json={**stage_body(run), "gold_path": str(tmp_path / "ghost.jsonl")})
    assert r.status_code in (409, 422)


def test_manifest_for_unknown_run_is_404(client, tmp_path):
    r = client.get("/manifest", params={"run_dir": str(tmp_path / "nope")})
    assert r.status_code == 404
