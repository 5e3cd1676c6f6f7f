"""Schema definitions, the table-level graph, and atomic route derivation.

A schema is a set of tables linked by foreign keys.  Tables with a single
foreign key exchange information directly with their target; tables with two
or more foreign keys act as junctions, and every ordered pair of their foreign
keys yields a source -> junction -> destination route.  Route derivation is a
pure function of the schema, so route ids are stable across runs.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "SchemaError",
    "SchemaSyntaxError",
    "SchemaValidationError",
    "ColumnKind",
    "ColumnSpec",
    "ForeignKeySpec",
    "TableDef",
    "SchemaDef",
    "SchemaGraph",
    "TableClass",
    "AtomicRoute",
    "parse_schema",
    "emit_schema",
    "build_schema_graph",
    "classify_tables",
    "derive_atomic_routes",
    "edge_relations",
    "emit_routes",
    "schema_laplacian",
]


class SchemaError(ValueError):
    """Base class for schema problems."""


class SchemaSyntaxError(SchemaError):
    """The document could not be parsed at all; carries a position."""


class SchemaValidationError(SchemaError):
    """The document parsed but violates a schema invariant."""


class ColumnKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TIMESTAMP = "timestamp"


@dataclass(frozen=True)
class ColumnSpec:
    """A non-key attribute column."""

    name: str
    kind: ColumnKind
    cardinality: Optional[int] = None  # optional hint for categorical columns


@dataclass(frozen=True)
class ForeignKeySpec:
    """A column referencing another table's primary key."""

    column: str
    target_table: str
    nullable: bool = False


@dataclass(frozen=True)
class TableDef:
    name: str
    primary_key: str
    foreign_keys: tuple[ForeignKeySpec, ...] = ()
    attributes: tuple[ColumnSpec, ...] = ()
    time_column: Optional[str] = None

    def columns(self):
        """All declared column names, in header order."""
        names = [self.primary_key]
        names.extend(fk.column for fk in self.foreign_keys)
        names.extend(a.name for a in self.attributes)
        if self.time_column is not None:
            names.append(self.time_column)
        return names


@dataclass(frozen=True)
class SchemaDef:
    tables: tuple[TableDef, ...]

    def table(self, name) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"no table named {name!r}")

    def table_names(self):
        return [t.name for t in self.tables]


@dataclass(frozen=True)
class SchemaGraph:
    """Table-level topology: one node per table, one directed edge per FK."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, str], ...]  # (fkey_table, pkey_table, fk column)


class TableClass(str, enum.Enum):
    ENTITY = "entity"  # zero or one foreign key
    BRIDGE = "bridge"  # exactly two foreign keys
    HUB = "hub"  # three or more foreign keys


@dataclass(frozen=True)
class AtomicRoute:
    """A direct (src -> dst) or composite (src -> mid -> dst) schema path.

    ``fk_table`` owns the foreign key column(s).  For direct routes the
    ``forward`` flag distinguishes the FK-owner -> target direction from its
    mirror; for composite routes the mid table owns both columns.
    """

    route_id: int
    kind: str  # "direct" | "composite"
    src_type: str
    dst_type: str
    fk_table: str
    fk_src_column: Optional[str] = None  # composite: FK pointing at src_type
    fk_dst_column: Optional[str] = None  # composite: FK pointing at dst_type
    fk_column: Optional[str] = None  # direct: the single FK column
    forward: Optional[bool] = None  # direct: True when src_type owns the FK
    mid_type: Optional[str] = None  # composite: the junction table

    @property
    def is_composite(self):
        return self.kind == "composite"


def _require(cond, msg):
    if not cond:
        raise SchemaValidationError(msg)


def _ident(value, what):
    _require(isinstance(value, str) and value != "", f"{what} must be a non-empty string")
    return value


def parse_schema(text: str) -> SchemaDef:
    """Parse and validate a schema document (JSON).

    The document shape is::

        {"tables": [{"name", "primary_key",
                     "foreign_keys": [{"column", "target", "nullable"}],
                     "attributes": [{"name", "kind", "cardinality"}],
                     "time_column"}]}

    Raises :class:`SchemaSyntaxError` with a position when the text is not
    valid JSON, and :class:`SchemaValidationError` for semantic problems
    (duplicate names, unresolved FK targets, bad column kinds).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaSyntaxError(
            f"schema syntax error at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    _require(isinstance(doc, dict) and isinstance(doc.get("tables"), list),
             "schema document must be an object with a 'tables' list")
    tables = []
    for entry in doc["tables"]:
        _require(isinstance(entry, dict), "each table must be an object")
        name = _ident(entry.get("name"), "table name")
        pk = _ident(entry.get("primary_key"), f"primary_key of table {name!r}")
        fks = []
        for fk in entry.get("foreign_keys", []) or []:
            fks.append(ForeignKeySpec(
                column=_ident(fk.get("column"), f"foreign key column in {name!r}"),
                target_table=_ident(fk.get("target"), f"foreign key target in {name!r}"),
                nullable=bool(fk.get("nullable", False)),
            ))
        attrs = []
        for col in entry.get("attributes", []) or []:
            kind_raw = col.get("kind")
            try:
                kind = ColumnKind(kind_raw)
            except ValueError:
                raise SchemaValidationError(
                    f"table {name!r}: unsupported column kind {kind_raw!r} "
                    f"(expected numeric, categorical, or timestamp)"
                ) from None
            card = col.get("cardinality")
            if card is not None:
                _require(isinstance(card, int) and card >= 1,
                         f"table {name!r}: cardinality hint must be a positive integer")
            attrs.append(ColumnSpec(_ident(col.get("name"), f"attribute in {name!r}"),
                                    kind, card))
        time_column = entry.get("time_column")
        if time_column is not None:
            _ident(time_column, f"time_column of {name!r}")
        tables.append(TableDef(name, pk, tuple(fks), tuple(attrs), time_column))
    schema = SchemaDef(tuple(tables))
    _validate(schema)
    return schema


def _validate(schema: SchemaDef):
    names = schema.table_names()
    _require(len(set(names)) == len(names), "duplicate table name")
    known = set(names)
    for t in schema.tables:
        cols = t.columns()
        dup = {c for c in cols if cols.count(c) > 1}
        _require(not dup,
                 f"table {t.name!r}: column name(s) {sorted(dup)} declared more than once")
        if t.time_column is not None:
            for a in t.attributes:
                _require(a.name != t.time_column,
                         f"table {t.name!r}: time_column {t.time_column!r} collides with "
                         f"an attribute declared as {a.kind.value}; the time column must "
                         f"be a dedicated timestamp column")
        for fk in t.foreign_keys:
            _require(fk.target_table in known,
                     f"table {t.name!r}: foreign key {fk.column!r} targets "
                     f"undeclared table {fk.target_table!r}")


def emit_schema(schema: SchemaDef) -> str:
    """Serialize a schema back to its canonical JSON document."""
    doc = {"tables": []}
    for t in schema.tables:
        entry = {
            "name": t.name,
            "primary_key": t.primary_key,
            "foreign_keys": [
                {"column": fk.column, "target": fk.target_table, "nullable": fk.nullable}
                for fk in t.foreign_keys
            ],
            "attributes": [],
            "time_column": t.time_column,
        }
        for a in t.attributes:
            col = {"name": a.name, "kind": a.kind.value}
            if a.cardinality is not None:
                col["cardinality"] = a.cardinality
            entry["attributes"].append(col)
        doc["tables"].append(entry)
    return json.dumps(doc, indent=2, sort_keys=True)


def build_schema_graph(schema: SchemaDef) -> SchemaGraph:
    """One node per table, one directed labeled edge per foreign key."""
    edges = []
    for t in schema.tables:
        for fk in t.foreign_keys:
            edges.append((t.name, fk.target_table, fk.column))
    return SchemaGraph(tuple(schema.table_names()), tuple(edges))


def classify_tables(schema: SchemaDef) -> dict[str, TableClass]:
    """Classify every table by its foreign key count."""
    out = {}
    for t in schema.tables:
        k = len(t.foreign_keys)
        if k <= 1:
            out[t.name] = TableClass.ENTITY
        elif k == 2:
            out[t.name] = TableClass.BRIDGE
        else:
            out[t.name] = TableClass.HUB
    return out


def derive_atomic_routes(schema: SchemaDef) -> list[AtomicRoute]:
    """Enumerate every atomic route implied by the schema.

    Single-FK tables contribute a mirrored pair of direct routes; a table
    with k >= 2 foreign keys contributes k*(k-1) composite routes, one per
    ordered pair of distinct FK columns.  Routes are ordered lexicographically
    by (owning table, FK column names, direction), which fixes route ids.
    """
    staged = []
    for t in schema.tables:
        k = len(t.foreign_keys)
        if k == 1:
            fk = t.foreign_keys[0]
            staged.append(((t.name, fk.column, "", 0), dict(
                kind="direct", src_type=t.name, dst_type=fk.target_table,
                fk_table=t.name, fk_column=fk.column, forward=True)))
            staged.append(((t.name, fk.column, "", 1), dict(
                kind="direct", src_type=fk.target_table, dst_type=t.name,
                fk_table=t.name, fk_column=fk.column, forward=False)))
        elif k >= 2:
            for fk_a in t.foreign_keys:
                for fk_b in t.foreign_keys:
                    if fk_a.column == fk_b.column:
                        continue
                    staged.append(((t.name, fk_a.column, fk_b.column, 0), dict(
                        kind="composite", src_type=fk_a.target_table,
                        dst_type=fk_b.target_table, fk_table=t.name,
                        mid_type=t.name, fk_src_column=fk_a.column,
                        fk_dst_column=fk_b.column)))
    staged.sort(key=lambda item: item[0])
    return [AtomicRoute(route_id=i, **fields) for i, (_, fields) in enumerate(staged)]


def edge_relations(schema: SchemaDef) -> list[AtomicRoute]:
    """Raw FK edges, both directions, as direct routes.

    This is the edge set a conventional heterogeneous GNN consumes: every
    foreign key yields a (referencing -> referenced) relation and its reverse,
    regardless of how many foreign keys the owning table has.
    """
    staged = []
    for t in schema.tables:
        for fk in t.foreign_keys:
            staged.append(((t.name, fk.column, 0), dict(
                kind="direct", src_type=t.name, dst_type=fk.target_table,
                fk_table=t.name, fk_column=fk.column, forward=True)))
            staged.append(((t.name, fk.column, 1), dict(
                kind="direct", src_type=fk.target_table, dst_type=t.name,
                fk_table=t.name, fk_column=fk.column, forward=False)))
    staged.sort(key=lambda item: item[0])
    return [AtomicRoute(route_id=i, **fields) for i, (_, fields) in enumerate(staged)]


def route_to_dict(route: AtomicRoute) -> dict:
    if route.is_composite:
        return {
            "route_id": route.route_id,
            "variant": "composite",
            "src": route.src_type,
            "mid": route.mid_type,
            "dst": route.dst_type,
            "fk_src_column": route.fk_src_column,
            "fk_dst_column": route.fk_dst_column,
        }
    return {
        "route_id": route.route_id,
        "variant": "direct",
        "src": route.src_type,
        "dst": route.dst_type,
        "fk_table": route.fk_table,
        "fk_column": route.fk_column,
        "forward": route.forward,
    }


def emit_routes(routes, fmt="json") -> str:
    """Serialize routes as JSON or DOT; output is byte-deterministic."""
    if fmt == "json":
        return json.dumps([route_to_dict(r) for r in routes], indent=2, sort_keys=True)
    if fmt == "dot":
        lines = ["digraph atomic_routes {"]
        for r in routes:
            if r.is_composite:
                lines.append(
                    f'  "{r.src_type}" -> "{r.mid_type}" '
                    f'[label="r{r.route_id}:{r.fk_src_column}"];'
                )
                lines.append(
                    f'  "{r.mid_type}" -> "{r.dst_type}" '
                    f'[label="r{r.route_id}:{r.fk_dst_column}"];'
                )
            else:
                lines.append(
                    f'  "{r.src_type}" -> "{r.dst_type}" '
                    f'[label="r{r.route_id}:{r.fk_column}"];'
                )
        lines.append("}")
        return "\n".join(lines)
    raise ValueError(f"unsupported route format {fmt!r}")


def schema_laplacian(graph: SchemaGraph):
    """Unweighted Laplacian L = D - A of the undirected table graph.

    Multiple FK links between the same pair of tables collapse to one edge,
    and self-referencing links do not contribute (a self-loop cancels in
    D - A for the simple-graph convention used here).
    """
    import numpy as np

    index = {name: i for i, name in enumerate(graph.nodes)}
    n = len(graph.nodes)
    adj = np.zeros((n, n))
    for src, dst, _ in graph.edges:
        i, j = index[src], index[dst]
        if i != j:
            adj[i, j] = 1.0
            adj[j, i] = 1.0
    return np.diag(adj.sum(axis=1)) - adj
