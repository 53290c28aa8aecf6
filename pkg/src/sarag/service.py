"""HTTP service exposing the pipeline stages.

Stages operate on run directories on the service host's filesystem; the
bundled CLI talks to this app in-process by default and over the network
when pointed at a deployed instance.  Missing prerequisite artifacts map to
HTTP 409 with a `missing artifact: <kind>` detail.
"""

from __future__ import annotations

import logging
from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .config import ConfigError, PipelineConfig, load_config
from .corpus import CorpusError
from .evaluation import EvalError
from .store import StoreError

log = logging.getLogger(__name__)


class StageRequest(BaseModel):
    run_dir: str
    corpus_path: str | None = None
    config_path: str | None = None
    config: dict[str, Any] = Field(default_factory=dict)


class StageResponse(BaseModel):
    run_dir: str
    result: dict[str, Any]
    effective_config: dict[str, Any]


class AskRequest(StageRequest):
    query: str


class AskResponse(BaseModel):
    text: str
    cited_doc_ids: list[str]
    cited_triples: list[int]
    ranked_docs: list[tuple[str, float]]
    n_triples: int


class EvalRequest(StageRequest):
    gold_path: str
    mode: str = "full"


class ExportRequest(BaseModel):
    run_dir: str
    dest_dir: str


class HealthResponse(BaseModel):
    status: str
    version: str


def _effective_config(request: StageRequest) -> PipelineConfig:
    try:
        return load_config(request.config_path, overrides=request.config or {})
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _run(fn, *args, **kwargs) -> dict:
    try:
        return fn(*args, **kwargs)
    except StoreError as exc:
        status = 409 if "missing artifact" in str(exc) else 422
        raise HTTPException(status_code=status, detail=str(exc)) from exc
    except (CorpusError, EvalError, pipeline.PipelineError, ConfigError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="sarag", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/pipeline/ingest", response_model=StageResponse)
    def ingest(request: StageRequest) -> StageResponse:
        config = _effective_config(request)
        if not request.corpus_path:
            raise HTTPException(status_code=422, detail="ingest requires corpus_path")
        result = _run(pipeline.stage_ingest, request.run_dir, request.corpus_path, config)
        return _stage_response(request, result, config)

    @app.post("/pipeline/induce", response_model=StageResponse)
    def induce(request: StageRequest) -> StageResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_induce, request.run_dir, request.corpus_path, config)
        return _stage_response(request, result, config)

    @app.post("/pipeline/build-tables", response_model=StageResponse)
    def build_tables(request: StageRequest) -> StageResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_build_tables, request.run_dir, config)
        return _stage_response(request, result, config)

    @app.post("/pipeline/make-prefs", response_model=StageResponse)
    def make_prefs(request: StageRequest) -> StageResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_make_prefs, request.run_dir, config)
        return _stage_response(request, result, config)

    @app.post("/pipeline/index", response_model=StageResponse)
    def index(request: StageRequest) -> StageResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_index, request.run_dir, config)
        return _stage_response(request, result, config)

    @app.post("/ask", response_model=AskResponse)
    def ask(request: AskRequest) -> AskResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_ask, request.run_dir, request.query, config)
        answer = result["answer"]
        return AskResponse(
            text=answer["text"],
            cited_doc_ids=answer["cited_doc_ids"],
            cited_triples=answer["cited_triples"],
            ranked_docs=[(d, s) for d, s in result["ranked_docs"]],
            n_triples=result["n_triples"],
        )

    @app.post("/eval", response_model=StageResponse)
    def evaluate(request: EvalRequest) -> StageResponse:
        config = _effective_config(request)
        result = _run(pipeline.stage_eval, request.run_dir, request.gold_path, config, request.mode)
        return _stage_response(request, result, config)

    @app.post("/pipeline/export-prefs", response_model=StageResponse)
    def export_prefs(request: ExportRequest) -> StageResponse:
        result = _run(pipeline.stage_export_prefs, request.run_dir, request.dest_dir)
        return StageResponse(run_dir=request.run_dir, result=result, effective_config={})

    @app.get("/manifest")
    def manifest(run_dir: str) -> dict:
        from .store import RunStore

        try:
            return RunStore(run_dir).load_manifest().to_dict()
        except StoreError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    return app


def _stage_response(request: StageRequest, result: dict, config: PipelineConfig) -> StageResponse:
    effective = config.model_dump(mode="json")
    effective["ablations"] = sorted(effective.get("ablations", []))
    log.info("stage complete: run_dir=%s result=%s", request.run_dir, result.get("artifact"))
    return StageResponse(run_dir=request.run_dir, result=result, effective_config=effective)


app = create_app()
