"""Synthetic relational databases with junction-table motifs.

Two generators isolate the structures that matter for message passing:

* ``bridge``: a two-FK junction table (``links``) between attribute-bearing
  ``sources`` and label-bearing ``targets``.  A target is positive when the
  mean first attribute of its linked sources is positive, so the signal sits
  exactly one composite hop away while the junction rows themselves carry
  only noise.

* ``hub``: a three-FK junction (``events``) tying ``group_a`` (labeled) to
  ``group_b`` and ``group_c``.  The label is the sign of the summed products
  of the linked b/c first attributes, a second-order interaction that never
  appears in any single table.  Hub wiring concentrates each ``group_a`` row
  on a home b/c partner (with some leakage), so the interaction is
  recoverable from the entity's neighborhood.

Labels are deterministic functions of the generated attributes unless a flip
probability is configured.  Output is written as on-disk CSVs plus schema and
task documents, byte-identical for identical configurations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .database import Database, TableData
from .schema import (ColumnKind, ColumnSpec, ForeignKeySpec, SchemaDef,
                     TableDef, emit_schema)
from .train import TaskSpec

__all__ = ["MotifConfig", "generate_bridge_db", "generate_hub_db", "write_dataset"]


@dataclass(frozen=True)
class MotifConfig:
    motif: str = "bridge"  # bridge | hub
    n_src: int = 200
    n_dst: int = 200
    n_mid: int = 2000
    d_attr: int = 4
    n_noise: int = 2  # junction-table noise attribute count
    noise_std: float = 1.0
    label_flip_prob: float = 0.0
    hub_concentration: float = 0.9  # probability a hub link uses the home partner
    rng_seed: int = 0
    t_start: int = 1_000_000
    t_end: int = 2_000_000

    def __post_init__(self):
        if self.motif not in ("bridge", "hub"):
            raise ValueError(f"unknown motif {self.motif!r}")
        if min(self.n_src, self.n_dst, self.n_mid) < 1:
            raise ValueError("table sizes must be >= 1")
        if self.n_mid < 3 * self.n_dst:
            raise ValueError(
                f"infeasible counts: n_mid={self.n_mid} < 3 * n_dst={self.n_dst}"
            )
        if not (0.0 <= self.hub_concentration <= 1.0):
            raise ValueError("hub_concentration must be in [0, 1]")


def _numeric_cols(prefix, n):
    return tuple(ColumnSpec(f"{prefix}{i}", ColumnKind.NUMERIC) for i in range(n))


def _ids(n):
    return [str(i) for i in range(n)]


def _table(name, pk_values, fk_indices=None, numeric=None, timestamps=None):
    return TableData(name=name, pk_values=pk_values,
                     fk_indices=fk_indices or {}, numeric=numeric or {},
                     categorical={}, timestamps=timestamps)


def _dst_assignment(rng, n_mid, n_dst):
    """Junction -> labeled-entity wiring with at least 3 links per entity."""
    base = np.tile(np.arange(n_dst, dtype=np.int64), 3)
    rest = rng.integers(0, n_dst, size=n_mid - len(base), dtype=np.int64)
    return np.concatenate([base, rest])


def _maybe_flip(rng, labels, prob):
    if prob <= 0:
        return labels
    flips = rng.random(len(labels)) < prob
    return np.where(flips, 1.0 - labels, labels)


def generate_bridge_db(cfg: MotifConfig):
    """Build the bridge-motif dataset; returns (schema, database, task, labels)."""
    rng = np.random.default_rng(cfg.rng_seed)
    schema = SchemaDef((
        TableDef("sources", "source_id", (), _numeric_cols("a", cfg.d_attr)),
        TableDef("targets", "target_id", (), ()),
        TableDef("links", "link_id",
                 (ForeignKeySpec("source_id", "sources"),
                  ForeignKeySpec("target_id", "targets")),
                 _numeric_cols("n", cfg.n_noise), time_column="ts"),
    ))
    src_attrs = {f"a{i}": rng.standard_normal(cfg.n_src)
                 for i in range(cfg.d_attr)}
    dst_fk = _dst_assignment(rng, cfg.n_mid, cfg.n_dst)
    src_fk = rng.integers(0, cfg.n_src, size=cfg.n_mid, dtype=np.int64)
    noise = {f"n{i}": rng.normal(0.0, cfg.noise_std, cfg.n_mid)
             for i in range(cfg.n_noise)}
    ts = rng.integers(cfg.t_start, cfg.t_end, size=cfg.n_mid, dtype=np.int64)

    signal = src_attrs["a0"][src_fk]
    sums = np.bincount(dst_fk, weights=signal, minlength=cfg.n_dst)
    counts = np.bincount(dst_fk, minlength=cfg.n_dst)
    labels = (sums / counts > 0).astype(np.float64)
    labels = _maybe_flip(rng, labels, cfg.label_flip_prob)

    db = Database(schema, {
        "sources": _table("sources", _ids(cfg.n_src), numeric=src_attrs),
        "targets": _table("targets", _ids(cfg.n_dst)),
        "links": _table("links", _ids(cfg.n_mid),
                        fk_indices={"source_id": src_fk, "target_id": dst_fk},
                        numeric=noise, timestamps=ts),
    })
    task = TaskSpec(kind="classification", entity_table="targets",
                    training_table_csv="train_table.csv")
    return schema, db, task, labels


def generate_hub_db(cfg: MotifConfig):
    """Build the hub-motif dataset; returns (schema, database, task, labels)."""
    rng = np.random.default_rng(cfg.rng_seed)
    schema = SchemaDef((
        TableDef("group_a", "a_id", (), _numeric_cols("a", cfg.d_attr)),
        TableDef("group_b", "b_id", (), _numeric_cols("b", cfg.d_attr)),
        TableDef("group_c", "c_id", (), _numeric_cols("c", cfg.d_attr)),
        TableDef("events", "event_id",
                 (ForeignKeySpec("a_id", "group_a"),
                  ForeignKeySpec("b_id", "group_b"),
                  ForeignKeySpec("c_id", "group_c")),
                 _numeric_cols("n", cfg.n_noise), time_column="ts"),
    ))
    n_a, n_bc, n_hub = cfg.n_dst, cfg.n_src, cfg.n_mid
    a_attrs = {f"a{i}": rng.standard_normal(n_a) for i in range(cfg.d_attr)}
    b_attrs = {f"b{i}": rng.standard_normal(n_bc) for i in range(cfg.d_attr)}
    c_attrs = {f"c{i}": rng.standard_normal(n_bc) for i in range(cfg.d_attr)}
    a_fk = _dst_assignment(rng, n_hub, n_a)
    home_b = rng.integers(0, n_bc, size=n_a, dtype=np.int64)
    home_c = rng.integers(0, n_bc, size=n_a, dtype=np.int64)
    use_home_b = rng.random(n_hub) < cfg.hub_concentration
    use_home_c = rng.random(n_hub) < cfg.hub_concentration
    b_fk = np.where(use_home_b, home_b[a_fk],
                    rng.integers(0, n_bc, size=n_hub, dtype=np.int64))
    c_fk = np.where(use_home_c, home_c[a_fk],
                    rng.integers(0, n_bc, size=n_hub, dtype=np.int64))
    noise = {f"n{i}": rng.normal(0.0, cfg.noise_std, n_hub)
             for i in range(cfg.n_noise)}
    ts = rng.integers(cfg.t_start, cfg.t_end, size=n_hub, dtype=np.int64)

    products = b_attrs["b0"][b_fk] * c_attrs["c0"][c_fk]
    totals = np.bincount(a_fk, weights=products, minlength=n_a)
    labels = (totals > 0).astype(np.float64)
    labels = _maybe_flip(rng, labels, cfg.label_flip_prob)

    db = Database(schema, {
        "group_a": _table("group_a", _ids(n_a), numeric=a_attrs),
        "group_b": _table("group_b", _ids(n_bc), numeric=b_attrs),
        "group_c": _table("group_c", _ids(n_bc), numeric=c_attrs),
        "events": _table("events", _ids(n_hub),
                         fk_indices={"a_id": a_fk, "b_id": b_fk, "c_id": c_fk},
                         numeric=noise, timestamps=ts),
    })
    task = TaskSpec(kind="classification", entity_table="group_a",
                    training_table_csv="train_table.csv")
    return schema, db, task, labels


def generate(cfg: MotifConfig):
    if cfg.motif == "bridge":
        return generate_bridge_db(cfg)
    return generate_hub_db(cfg)


def task_table_from_labels(db: Database, task: TaskSpec, labels):
    """In-memory task table over every labeled entity, one tick past the
    newest event (so the whole history is visible to the sampler)."""
    from .train import TaskTable

    seed_time = max(int(db.tables[t.name].timestamps.max())
                    for t in db.schema.tables if t.time_column is not None) + 1
    n = db.tables[task.entity_table].n_rows
    return TaskTable(task,
                     entity_rows=np.arange(n, dtype=np.int64),
                     timestamps=np.full(n, seed_time, dtype=np.int64),
                     labels=np.asarray(labels, dtype=np.float64))


def _format_value(x):
    return repr(float(x))


def _write_table_csv(path, tdef: TableDef, tdata: TableData, db: Database):
    header = tdef.columns()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(tdata.n_rows):
            row = [tdata.pk_values[i]]
            for fk in tdef.foreign_keys:
                idx = tdata.fk_indices[fk.column][i]
                row.append("" if idx < 0 else
                           db.tables[fk.target_table].pk_values[idx])
            for a in tdef.attributes:
                if a.kind is ColumnKind.CATEGORICAL:
                    row.append(tdata.categorical[a.name][i])
                else:
                    v = tdata.numeric[a.name][i]
                    row.append("" if np.isnan(v) else _format_value(v))
            if tdef.time_column is not None:
                row.append(str(int(tdata.timestamps[i])))
            writer.writerow(row)


def write_dataset(cfg: MotifConfig, out_dir) -> Path:
    """Generate and persist a dataset directory the CLI can consume as-is.

    Writes ``schema.json``, one ``<table>.csv`` per table, the training table
    ``train_table.csv`` (seed time = one past the newest event), and
    ``task.json``.
    """
    schema, db, task, labels = generate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.json").write_text(emit_schema(schema), encoding="utf-8")
    for tdef in schema.tables:
        _write_table_csv(out / f"{tdef.name}.csv", tdef, db.tables[tdef.name], db)
    seed_time = max(int(db.tables[t.name].timestamps.max())
                    for t in schema.tables if t.time_column is not None) + 1
    entity = db.tables[task.entity_table]
    with open(out / "train_table.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["entity_id", "timestamp", "label"])
        for i in range(entity.n_rows):
            writer.writerow([entity.pk_values[i], str(seed_time),
                             str(int(labels[i]))])
    (out / "task.json").write_text(json.dumps({
        "kind": task.kind,
        "entity_table": task.entity_table,
        "training_table_csv": "train_table.csv",
    }, indent=2, sort_keys=True), encoding="utf-8")
    return out
