"""Versioned persistence for pipeline artifacts plus the run manifest.

Every artifact is written atomically (temp file + rename) and its sha256
checksum recorded in the manifest; loads verify checksums when a manifest
entry exists.  Formats: metadata as the prompt-contract JSON, rows / pairs /
gold / audit as JSONL, negatives as CSV, the index as a versioned JSON
container, manifest and report as JSON.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .corpus import Conversation, conversation_from_dict, save_corpus_jsonl
from .prefs import PreferencePair, negatives_csv
from .retrieval import VectorIndex, index_from_json, index_to_json
from .schema import Metadata, SchemaError
from .tables import TableRow

log = logging.getLogger(__name__)

ARTIFACT_FILES = {
    "corpus": "corpus.jsonl",
    "metadata": "metadata.json",
    "rows": "rows.jsonl",
    "pairs": "pairs.jsonl",
    "structure_bad": "structure_bad.csv",
    "index": "index.bin",
    "report": "report.json",
    "audit": "audit.jsonl",
}


class StoreError(RuntimeError):
    pass


@dataclass
class RunManifest:
    run_id: str
    config_hash: str = ""
    seed: int = 0
    created_at: str = ""
    paths: dict[str, str] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "created_at": self.created_at,
            "paths": dict(self.paths),
            "checksums": dict(self.checksums),
            "extras": dict(self.extras),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "RunManifest":
        return cls(
            run_id=str(payload.get("run_id", "")),
            config_hash=str(payload.get("config_hash", "")),
            seed=int(payload.get("seed", 0)),
            created_at=str(payload.get("created_at", "")),
            paths={str(k): str(v) for k, v in payload.get("paths", {}).items()},
            checksums={str(k): str(v) for k, v in payload.get("checksums", {}).items()},
            extras=dict(payload.get("extras", {})),
        )


def atomic_write_bytes(path: Path, blob: bytes) -> str:
    """Write via a temp file in the target directory, then rename; returns
    the sha256 checksum of the written bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return hashlib.sha256(blob).hexdigest()


# -- serializers --------------------------------------------------------------


def _ser_metadata(meta: Metadata) -> bytes:
    return (json.dumps(meta.to_persist(), ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def _ser_rows(rows: list[TableRow]) -> bytes:
    lines = [json.dumps(r.to_dict(), ensure_ascii=False) for r in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _ser_pairs(pairs: list[PreferencePair]) -> bytes:
    lines = [json.dumps(p.to_dict(), ensure_ascii=False) for p in pairs]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _ser_structure_bad(pairs: list[PreferencePair]) -> bytes:
    return negatives_csv(pairs).encode("utf-8")


def _ser_index(index: VectorIndex) -> bytes:
    return index_to_json(index).encode("utf-8")


def _ser_report(report: Any) -> bytes:
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    return (json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _ser_audit(entries: list[dict]) -> bytes:
    lines = [json.dumps(e, ensure_ascii=False) for e in entries]
    return (("\n".join(lines) + "\n") if lines else "").encode("utf-8")


def _ser_corpus(conversations: list[Conversation]) -> bytes:
    return save_corpus_jsonl(conversations).encode("utf-8")


_SERIALIZERS: dict[str, Callable[[Any], bytes]] = {
    "corpus": _ser_corpus,
    "metadata": _ser_metadata,
    "rows": _ser_rows,
    "pairs": _ser_pairs,
    "structure_bad": _ser_structure_bad,
    "index": _ser_index,
    "report": _ser_report,
    "audit": _ser_audit,
}


def save_artifact(kind: str, value: Any, path: str | Path) -> str:
    """Serialize and atomically write one artifact; returns its checksum."""
    serializer = _SERIALIZERS.get(kind)
    if serializer is None:
        raise StoreError(f"unknown artifact kind {kind!r}")
    try:
        blob = serializer(value)
    except (TypeError, ValueError, AttributeError) as exc:
        raise StoreError(f"cannot serialize {kind}: {exc}") from exc
    try:
        return atomic_write_bytes(Path(path), blob)
    except OSError as exc:
        raise StoreError(f"cannot write {kind} to {path}: {exc}") from exc


# -- loaders -------------------------------------------------------------------


def _jsonl_records(path: Path, kind: str) -> list[tuple[int, Any]]:
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise StoreError(f"{kind} file {path.name} line {lineno}: invalid JSON ({exc.msg})")
    return records


def _load_rows(path: Path, meta: Metadata | None) -> list[TableRow]:
    rows = []
    for lineno, payload in _jsonl_records(path, "rows"):
        try:
            row = TableRow.from_dict(payload, meta)
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"rows file line {lineno}: invalid row ({exc})") from exc
        if meta is not None and set(row.cells) != set(meta.column_names()):
            raise StoreError(
                f"rows file line {lineno} (conversation {row.conversation_id!r}): "
                "cell keys do not match the schema columns"
            )
        rows.append(row)
    return rows


def load_artifact(
    kind: str,
    path: str | Path,
    *,
    manifest: RunManifest | None = None,
    meta: Metadata | None = None,
    capacity: int = 20,
) -> Any:
    """Load, checksum-verify (when the manifest knows the artifact), and
    invariant-check one artifact."""
    path = Path(path)
    if not path.exists():
        raise StoreError(f"missing artifact: {kind} ({path})")
    blob = path.read_bytes()

    if manifest is not None:
        expected = manifest.checksums.get(kind)
        if expected is None:
            log.warning("manifest has no checksum for %s; skipping verification", kind)
        else:
            actual = hashlib.sha256(blob).hexdigest()
            if actual != expected:
                raise StoreError(
                    f"checksum mismatch for {kind}: manifest {expected[:12]}…, file {actual[:12]}…"
                )

    if kind == "corpus":
        records = _jsonl_records(path, kind)
        return [conversation_from_dict(p, f"{path.name} line {ln}") for ln, p in records]
    if kind == "metadata":
        try:
            return Metadata.from_persist(json.loads(blob.decode("utf-8")), capacity=capacity)
        except (json.JSONDecodeError, SchemaError) as exc:
            raise StoreError(f"invalid metadata file {path}: {exc}") from exc
    if kind == "rows":
        return _load_rows(path, meta)
    if kind == "pairs":
        pairs = []
        for lineno, payload in _jsonl_records(path, kind):
            try:
                pairs.append(PreferencePair.from_dict(payload))
            except (KeyError, ValueError, TypeError) as exc:
                raise StoreError(f"pairs file line {lineno}: invalid pair ({exc})") from exc
        return pairs
    if kind == "index":
        return index_from_json(blob.decode("utf-8"))
    if kind == "report":
        return json.loads(blob.decode("utf-8"))
    if kind == "audit":
        return [payload for _ln, payload in _jsonl_records(path, kind)]
    if kind == "structure_bad":
        return blob.decode("utf-8")
    raise StoreError(f"unknown artifact kind {kind!r}")


# -- run directories -----------------------------------------------------------


class RunStore:
    """One run directory: artifact paths, manifest bookkeeping."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.json"

    def artifact_path(self, kind: str) -> Path:
        try:
            return self.run_dir / ARTIFACT_FILES[kind]
        except KeyError:
            raise StoreError(f"unknown artifact kind {kind!r}") from None

    def load_manifest(self) -> RunManifest:
        if not self.manifest_path.exists():
            raise StoreError(f"missing artifact: manifest ({self.manifest_path})")
        return RunManifest.from_dict(json.loads(self.manifest_path.read_text(encoding="utf-8")))

    def manifest_or_new(self, *, config_hash: str = "", seed: int = 0) -> RunManifest:
        if self.manifest_path.exists():
            return self.load_manifest()
        return RunManifest(
            run_id=self.run_dir.name,
            config_hash=config_hash,
            seed=seed,
            created_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        )

    def write_manifest(self, manifest: RunManifest) -> None:
        for kind, raw in manifest.paths.items():
            if not Path(raw).exists():
                raise StoreError(f"manifest references missing path for {kind}: {raw}")
        blob = (json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n").encode("utf-8")
        atomic_write_bytes(self.manifest_path, blob)

    def save(self, kind: str, value: Any, manifest: RunManifest) -> str:
        path = self.artifact_path(kind)
        checksum = save_artifact(kind, value, path)
        manifest.paths[kind] = str(path)
        manifest.checksums[kind] = checksum
        return checksum

    def load(self, kind: str, *, meta: Metadata | None = None, capacity: int = 20) -> Any:
        manifest = None
        if self.manifest_path.exists():
            manifest = self.load_manifest()
        else:
            log.warning("no manifest in %s; loading %s without checksum check", self.run_dir, kind)
        path = self.artifact_path(kind)
        if manifest is not None and kind in manifest.paths:
            path = Path(manifest.paths[kind])
        return load_artifact(kind, path, manifest=manifest, meta=meta, capacity=capacity)

    def has(self, kind: str) -> bool:
        return self.artifact_path(kind).exists()
