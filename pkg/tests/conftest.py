from __future__ import annotations

import pytest

from sarag import pipeline
from sarag.config import PipelineConfig
from sarag.corpus import load_corpus
from sarag.providers import build_gateway


@pytest.fixture(scope="session")
def toy_corpus():
    return load_corpus(pipeline.toy_corpus_path())


@pytest.fixture()
def config():
    return PipelineConfig()


@pytest.fixture()
def gateway(config):
    return build_gateway(config)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One full pipeline run over the bundled corpus, shared read-only."""
    cfg = PipelineConfig()
    run = tmp_path_factory.mktemp("toy") / "run"
    pipeline.stage_induce(run, pipeline.toy_corpus_path(), cfg)
    pipeline.stage_build_tables(run, cfg)
    pipeline.stage_make_prefs(run, cfg)
    pipeline.stage_index(run, cfg)
    return run


@pytest.fixture(scope="session")
def toy_meta(toy_run):
    from sarag.store import RunStore

    return RunStore(toy_run).load("metadata")


@pytest.fixture(scope="session")
def toy_rows(toy_run, toy_meta):
    from sarag.store import RunStore

    return RunStore(toy_run).load("rows", meta=toy_meta)
