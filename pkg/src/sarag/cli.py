"""Thin command-line client for the pipeline service.

By default the CLI mounts the service in-process (no network, no server to
start); `--server http://host:port` targets a running instance instead.
Exit codes: 0 success, 1 stage failure, 2 missing prerequisite artifact or
bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any

import httpx

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING = 2


class ServiceClient:
    """HTTP client over either an in-process app or a remote server.

    The in-process path mounts the service behind a portal-backed transport,
    so every subcommand exercises the same HTTP surface a deployed instance
    serves, without a socket.
    """

    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=300.0)
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette advertises its next-gen httpx backend on import
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> httpx.Response:
        return self._client.post(path, json=payload)

    def get(self, path: str, params: dict) -> httpx.Response:
        return self._client.get(path, params=params)

    def close(self) -> None:
        self._client.close()


def _config_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for key in (
        "provider",
        "capacity",
        "top_k",
        "max_depth",
        "evidence_budget",
        "drop_rate",
        "noise_rate",
        "seed",
        "embed_dim",
        "jobs",
        "positives_path",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    ablations = set(getattr(args, "ablation", None) or [])
    if ablations:
        overrides["ablations"] = sorted(ablations)
    return overrides


def _stage_payload(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "run_dir": args.run,
        "corpus_path": getattr(args, "corpus", None),
        "config_path": getattr(args, "config", None),
        "config": _config_overrides(args),
    }


def _handle(response: httpx.Response, *, print_result: bool = True) -> int:
    if response.status_code == 409:
        detail = response.json().get("detail", "missing prerequisite artifact")
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_MISSING
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_FAILURE
    if print_result:
        body = response.json()
        print(json.dumps(body.get("result", body), indent=2, ensure_ascii=False))
    return EXIT_OK


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run", required=True, help="run directory for artifacts")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    parser.add_argument("--provider", default=None, help="mock | file:<descriptor.json> | openai")
    parser.add_argument("--capacity", type=int, default=None, help="schema column capacity (default 20)")
    parser.add_argument("--top-k", dest="top_k", type=int, default=None, help="retrieval depth (default 3)")
    parser.add_argument("--max-depth", dest="max_depth", type=int, default=None, help="evidence expansion depth (default 3)")
    parser.add_argument("--evidence-budget", dest="evidence_budget", type=int, default=None, help="evidence item budget (default 10)")
    parser.add_argument("--drop-rate", dest="drop_rate", type=float, default=None, help="perturbation drop rate (default 0.3)")
    parser.add_argument("--noise-rate", dest="noise_rate", type=float, default=None, help="perturbation noise rate (default 0.3)")
    parser.add_argument("--seed", type=int, default=None, help="global random seed (default 0)")
    parser.add_argument("--embed-dim", dest="embed_dim", type=int, default=None, help="embedding dimension (default 256)")
    parser.add_argument("--jobs", type=int, default=None, help="worker bound for parallel stages (default 1)")
    parser.add_argument("--positives-path", dest="positives_path", default=None, help="curated positive rows (JSONL)")
    parser.add_argument(
        "--ablation",
        action="append",
        choices=["no_metadata", "no_validation"],
        default=None,
        help="disable a pipeline component (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarag",
        description="Table-grounded retrieval pipeline over support dialogues.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    specs = [
        ("ingest", "validate a corpus and copy it into the run directory"),
        ("induce", "evolve the table schema over the corpus"),
        ("build-tables", "generate and validate one row per conversation"),
        ("make-prefs", "build preference pairs and the negatives CSV"),
        ("index", "embed rows and conversations into the retrieval index"),
        ("ask", "answer a question from the indexed run"),
        ("eval", "run the metric suite over a gold file"),
        ("export-prefs", "copy preference artifacts for a trainer"),
    ]
    for name, help_text in specs:
        sub = subparsers.add_parser(
            name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        _add_common_flags(sub)
        if name in ("ingest", "induce"):
            sub.add_argument("--corpus", default=None, help="corpus JSONL path")
        if name == "ask":
            sub.add_argument("--query", required=True, help="question to answer")
        if name == "eval":
            sub.add_argument("--gold", required=True, help="gold judgments JSONL path")
            sub.add_argument(
                "--mode",
                default=None,
                choices=["full", "no_metadata", "no_validation", "baseline"],
                help="evaluation variant (defaults to full, or the ablation flag)",
            )
        if name == "export-prefs":
            sub.add_argument("--dest", required=True, help="destination directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "ingest" and not args.corpus:
        parser.error("ingest requires --corpus")

    client = ServiceClient(args.server)
    try:
        if args.command in ("ingest", "induce", "build-tables", "make-prefs", "index"):
            path = {
                "ingest": "/pipeline/ingest",
                "induce": "/pipeline/induce",
                "build-tables": "/pipeline/build-tables",
                "make-prefs": "/pipeline/make-prefs",
                "index": "/pipeline/index",
            }[args.command]
            return _handle(client.post(path, _stage_payload(args)))

        if args.command == "ask":
            payload = {**_stage_payload(args), "query": args.query}
            response = client.post("/ask", payload)
            if response.status_code < 400:
                body = response.json()
                print(
                    json.dumps(
                        {
                            "text": body["text"],
                            "cited_doc_ids": body["cited_doc_ids"],
                            "cited_triples": body["cited_triples"],
                        },
                        indent=2,
                        ensure_ascii=False,
                    )
                )
                return EXIT_OK
            return _handle(response, print_result=False)

        if args.command == "eval":
            mode = args.mode
            if mode is None:
                ablations = set(args.ablation or [])
                mode = next(iter(sorted(ablations)), "full")
            payload = {**_stage_payload(args), "gold_path": args.gold, "mode": mode}
            response = client.post("/eval", payload)
            if response.status_code < 400:
                body = response.json()
                print(body["result"]["text_table"])
                return EXIT_OK
            return _handle(response, print_result=False)

        if args.command == "export-prefs":
            payload = {"run_dir": args.run, "dest_dir": args.dest}
            return _handle(client.post("/pipeline/export-prefs", payload))

        parser.error(f"unknown command {args.command!r}")
        return EXIT_FAILURE
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
