"""CSV loading, referential-integrity validation, and the row-level graph.

Each table lives in ``<table>.csv`` (RFC-4180, UTF-8, header row, empty
string = null).  Foreign key cells are resolved to row indices of the target
table at load time; the reverse adjacency is materialized in compressed
sparse form so neighbor lookups are O(degree).
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .schema import ColumnKind, SchemaDef, TableDef

__all__ = [
    "DataValidationError",
    "TableData",
    "Database",
    "ReverseAdjacency",
    "EntityGraph",
    "parse_timestamp",
    "load_database",
    "build_entity_graph",
]

NULL_INDEX = -1  # marker for a null foreign key in resolved index arrays


class DataValidationError(ValueError):
    """The data violates the schema (missing columns, broken references...)."""


def parse_timestamp(text: str) -> int:
    """Parse integer seconds or an ISO-8601 date/datetime to epoch seconds."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        dt = _dt.datetime.fromisoformat(text)
    except ValueError:
        raise DataValidationError(f"cannot parse timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=_dt.timezone.utc)
    return int(dt.timestamp())


@dataclass
class TableData:
    """One loaded table: keys, resolved FK indices, and typed columns."""

    name: str
    pk_values: list[str]
    fk_indices: dict[str, np.ndarray]  # column -> int64 row indices, -1 = null
    numeric: dict[str, np.ndarray]  # column -> float64, NaN = missing
    categorical: dict[str, list[str]]  # column -> raw string values
    timestamps: Optional[np.ndarray] = None  # int64 epoch seconds

    @property
    def n_rows(self):
        return len(self.pk_values)


@dataclass
class Database:
    schema: SchemaDef
    tables: dict[str, TableData]

    def table(self, name) -> TableData:
        return self.tables[name]


def _read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path.name}: empty file (no header row)") from None
        rows = list(reader)
    return header, rows


def _load_table(tdef: TableDef, path: Path) -> dict[str, list[str]]:
    header, rows = _read_csv(path)
    declared = tdef.columns()
    missing = [c for c in declared if c not in header]
    extra = [c for c in header if c not in declared]
    if missing:
        raise DataValidationError(f"{tdef.name}: missing column(s) {missing}")
    if extra:
        raise DataValidationError(f"{tdef.name}: undeclared column(s) {extra}")
    if len(set(header)) != len(header):
        raise DataValidationError(f"{tdef.name}: duplicate column in header")
    columns = {c: [] for c in header}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataValidationError(
                f"{tdef.name}: row {i} has {len(row)} fields, expected {len(header)}"
            )
        for c, v in zip(header, row):
            columns[c].append(v)
    return columns


def load_database(schema: SchemaDef, directory) -> Database:
    """Load ``<table>.csv`` for every schema table and validate references.

    Raises :class:`DataValidationError` on missing files or columns,
    duplicate primary keys, null values in non-nullable foreign keys, and
    foreign key values with no matching primary key.
    """
    directory = Path(directory)
    raw: dict[str, dict[str, list[str]]] = {}
    for tdef in schema.tables:
        path = directory / f"{tdef.name}.csv"
        if not path.is_file():
            raise DataValidationError(f"missing data file {path.name}")
        raw[tdef.name] = _load_table(tdef, path)

    pk_maps: dict[str, dict[str, int]] = {}
    for tdef in schema.tables:
        values = raw[tdef.name][tdef.primary_key]
        seen: dict[str, int] = {}
        for i, v in enumerate(values):
            if v in seen:
                raise DataValidationError(
                    f"{tdef.name}: duplicate primary key {v!r} at row {i}"
                )
            seen[v] = i
        pk_maps[tdef.name] = seen

    tables: dict[str, TableData] = {}
    for tdef in schema.tables:
        cols = raw[tdef.name]
        n = len(cols[tdef.primary_key])
        fk_indices = {}
        for fk in tdef.foreign_keys:
            target = pk_maps[fk.target_table]
            idx = np.empty(n, dtype=np.int64)
            for i, v in enumerate(cols[fk.column]):
                if v == "":
                    if not fk.nullable:
                        raise DataValidationError(
                            f"{tdef.name}: row {i}: foreign key {fk.column!r} "
                            f"is empty but not nullable"
                        )
                    idx[i] = NULL_INDEX
                elif v in target:
                    idx[i] = target[v]
                else:
                    raise DataValidationError(
                        f"{tdef.name}: row {i}: foreign key {fk.column!r}={v!r} "
                        f"has no matching primary key in {fk.target_table!r}"
                    )
            fk_indices[fk.column] = idx
        numeric = {}
        categorical = {}
        for a in tdef.attributes:
            if a.kind is ColumnKind.NUMERIC:
                arr = np.empty(n, dtype=np.float64)
                for i, v in enumerate(cols[a.name]):
                    if v == "":
                        arr[i] = np.nan
                    else:
                        try:
                            arr[i] = float(v)
                        except ValueError:
                            raise DataValidationError(
                                f"{tdef.name}: row {i}: column {a.name!r}: "
                                f"{v!r} is not numeric"
                            ) from None
                numeric[a.name] = arr
            elif a.kind is ColumnKind.TIMESTAMP:
                arr = np.empty(n, dtype=np.float64)
                for i, v in enumerate(cols[a.name]):
                    arr[i] = np.nan if v == "" else float(parse_timestamp(v))
                numeric[a.name] = arr
            else:
                categorical[a.name] = list(cols[a.name])
        timestamps = None
        if tdef.time_column is not None:
            ts = np.empty(n, dtype=np.int64)
            for i, v in enumerate(cols[tdef.time_column]):
                if v == "":
                    raise DataValidationError(
                        f"{tdef.name}: row {i}: time column "
                        f"{tdef.time_column!r} is empty"
                    )
                ts[i] = parse_timestamp(v)
            timestamps = ts
        tables[tdef.name] = TableData(
            name=tdef.name,
            pk_values=list(cols[tdef.primary_key]),
            fk_indices=fk_indices,
            numeric=numeric,
            categorical=categorical,
            timestamps=timestamps,
        )
    return Database(schema, tables)


@dataclass
class ReverseAdjacency:
    """CSR map from a referenced row to the sorted rows referencing it."""

    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, row):
        return self.indices[self.indptr[row]:self.indptr[row + 1]]


def _build_reverse(fk: np.ndarray, n_target: int) -> ReverseAdjacency:
    valid = fk >= 0
    counts = np.bincount(fk[valid], minlength=n_target)
    indptr = np.zeros(n_target + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    order = np.argsort(fk[valid], kind="stable")
    indices = np.flatnonzero(valid)[order]
    return ReverseAdjacency(indptr, indices.astype(np.int64))


@dataclass
class EntityGraph:
    """Row-level heterogeneous temporal graph over a loaded database.

    ``forward[(table, column)]`` maps each referencing row to its target row
    (or -1); ``reverse[(table, column)]`` is the exact transpose.  The raw
    database is kept attached, which makes the transformation lossless.
    """

    db: Database
    forward: dict[tuple[str, str], np.ndarray]
    reverse: dict[tuple[str, str], ReverseAdjacency]

    @property
    def schema(self):
        return self.db.schema

    def n_nodes(self, table):
        return self.db.tables[table].n_rows

    def timestamps(self, table):
        return self.db.tables[table].timestamps

    def to_database(self) -> Database:
        """Recover the database; inverse of :func:`build_entity_graph`."""
        return self.db


def build_entity_graph(db: Database) -> EntityGraph:
    """Materialize forward FK maps and their reverse adjacency per link."""
    forward = {}
    reverse = {}
    for tdef in db.schema.tables:
        data = db.tables[tdef.name]
        for fk in tdef.foreign_keys:
            key = (tdef.name, fk.column)
            forward[key] = data.fk_indices[fk.column]
            reverse[key] = _build_reverse(
                data.fk_indices[fk.column], db.tables[fk.target_table].n_rows
            )
    return EntityGraph(db, forward, reverse)
