"""Table metadata: column specs, the evolving schema, and its wire format.

The persisted form mirrors the extraction prompt's JSON contract:
a one-element list holding `{table_name, Columns[...], functional_dependencies,
version}`.  The misspelled legacy key `functional_denpendencies` is accepted
on read and normalized on write.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

from .textutil import is_snake_case, to_snake_case

log = logging.getLogger(__name__)

DTYPES = ("int", "string", "float", "boolean", "date", "datetime")

_DTYPE_ALIASES = {
    "integer": "int",
    "bigint": "int",
    "smallint": "int",
    "str": "string",
    "text": "string",
    "varchar": "string",
    "double": "float",
    "real": "float",
    "decimal": "float",
    "number": "float",
    "bool": "boolean",
    "timestamp": "datetime",
    "time": "datetime",
    "day": "date",
}

DEFAULT_CAPACITY = 20


class SchemaError(ValueError):
    """Raised when metadata violates its structural invariants."""


def coerce_dtype(raw: Any) -> str:
    """Map a free-form type tag onto the supported enum; unknown becomes string."""
    tag = str(raw).strip().lower()
    if tag in DTYPES:
        return tag
    return _DTYPE_ALIASES.get(tag, "string")


@dataclass
class ColumnSpec:
    """One column of the evolving schema.

    Raw extracted candidates may carry invalid names or dtypes; validation
    is deferred to the normalizer and to schema updates, which enforce it.
    """

    name: str
    dtype: str = "string"
    semantic: str = ""
    constraints: list[str] = field(default_factory=list)
    note: str = ""

    def well_formed(self) -> bool:
        return (
            is_snake_case(self.name)
            and self.dtype in DTYPES
            and bool(self.semantic.strip())
            and all(isinstance(c, str) for c in self.constraints)
        )

    def normalized(self) -> "ColumnSpec":
        """Deterministic local normalization: snake name, enum dtype."""
        return replace(
            self,
            name=self.name if is_snake_case(self.name) else to_snake_case(self.name),
            dtype=coerce_dtype(self.dtype),
            semantic=self.semantic.strip(),
            constraints=[str(c).strip().lower() for c in self.constraints if str(c).strip()],
        )

    def has_constraint(self, name: str) -> bool:
        return any(c.strip().lower() == name for c in self.constraints)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "type": self.dtype,
            "semantic": self.semantic,
            "constraints": list(self.constraints),
            "Note": self.note,
        }

    @classmethod
    def from_dict(cls, raw: Any) -> "ColumnSpec":
        if not isinstance(raw, dict):
            raise SchemaError(f"column spec must be an object, got {type(raw).__name__}")
        name = raw.get("name")
        if not isinstance(name, str) or not name.strip():
            raise SchemaError("column spec missing 'name'")
        constraints = raw.get("constraints", [])
        if isinstance(constraints, str):
            constraints = [constraints]
        if not isinstance(constraints, list):
            constraints = []
        return cls(
            name=name.strip(),
            dtype=str(raw.get("type", raw.get("dtype", "string"))),
            semantic=str(raw.get("semantic", "")),
            constraints=[str(c) for c in constraints],
            note=str(raw.get("Note", raw.get("note", ""))),
        )


@dataclass
class Metadata:
    """The evolving table schema, bounded by a hard column capacity."""

    table_name: str = "support_cases"
    columns: list[ColumnSpec] = field(default_factory=list)
    functional_dependencies: list[str] = field(default_factory=list)
    version: int = 0
    capacity: int = DEFAULT_CAPACITY

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def find(self, name: str) -> ColumnSpec | None:
        for col in self.columns:
            if col.name == name:
                return col
        return None

    def copy(self) -> "Metadata":
        return Metadata(
            table_name=self.table_name,
            columns=[replace(c, constraints=list(c.constraints)) for c in self.columns],
            functional_dependencies=list(self.functional_dependencies),
            version=self.version,
            capacity=self.capacity,
        )

    def validate(self) -> None:
        names = self.column_names()
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        if len(self.columns) > self.capacity:
            raise SchemaError(f"{len(self.columns)} columns exceed capacity {self.capacity}")
        if self.version < 0:
            raise SchemaError("version must be non-negative")
        if self.capacity < 1:
            raise SchemaError("capacity must be positive")

    def to_persist(self) -> list[dict[str, Any]]:
        return [
            {
                "table_name": self.table_name,
                "Columns": [c.to_dict() for c in self.columns],
                "functional_dependencies": list(self.functional_dependencies),
                "version": self.version,
            }
        ]

    @classmethod
    def from_persist(cls, payload: Any, capacity: int = DEFAULT_CAPACITY) -> "Metadata":
        """Parse the wire form; accepts a bare object or a one-element list."""
        obj = payload
        if isinstance(obj, list):
            if not obj:
                raise SchemaError("metadata payload is an empty list")
            obj = obj[0]
        if not isinstance(obj, dict):
            raise SchemaError(f"metadata payload must be an object, got {type(obj).__name__}")
        raw_columns = obj.get("Columns", obj.get("columns", []))
        if not isinstance(raw_columns, list):
            raise SchemaError("'Columns' must be a list")
        deps = obj.get("functional_dependencies")
        if deps is None:
            deps = obj.get("functional_denpendencies", [])
        if not isinstance(deps, list):
            deps = [str(deps)]
        version = obj.get("version", 0)
        if not isinstance(version, int) or isinstance(version, bool):
            try:
                version = int(version)
            except (TypeError, ValueError):
                version = 0
        return cls(
            table_name=str(obj.get("table_name", "support_cases")),
            columns=[ColumnSpec.from_dict(c) for c in raw_columns],
            functional_dependencies=[str(d) for d in deps],
            version=max(0, version),
            capacity=capacity,
        )


def normalize_metadata(raw: Metadata) -> Metadata:
    """Local deterministic normalization applied to every column.

    Idempotent; guarantees snake_case names and enum dtypes regardless of
    what a model produced.  Structure (table name, dependencies, version)
    is preserved.
    """
    return Metadata(
        table_name=raw.table_name.strip() or "support_cases",
        columns=[c.normalized() for c in raw.columns],
        functional_dependencies=[d.strip() for d in raw.functional_dependencies if d.strip()],
        version=raw.version,
        capacity=raw.capacity,
    )
