"""Raw column statistics and the learned per-type input encoders.

Fitting is a pure statistics pass over training rows (means, stds, category
vocabularies).  Encoding combines standardized numerics, learned categorical
embeddings, and an optional encoding of the age of each row relative to its
serving seed time, then projects everything to the model width with a learned
per-type linear map.  Attribute-free types fall back to a learned constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .database import Database, TableData
from .params import ParamStore
from .schema import ColumnKind, SchemaDef
from .tensor import Tensor

__all__ = [
    "TimeEncoderConfig",
    "FeatureEncoder",
    "fit_encoders",
    "NodeEncoder",
    "MAX_EMBED_DIM",
]

MAX_EMBED_DIM = 16  # categorical embedding width cap


@dataclass(frozen=True)
class TimeEncoderConfig:
    """Node-age encoding: none, learnable sinusoids, or fixed cosines.

    ``time2vec`` computes sin(w_i * dt + p_i) with learnable w, p.
    ``fixedcos`` computes cos(dt * w_i) with fixed w_i = alpha^(-(i-1)/beta).
    """

    kind: str = "none"  # none | time2vec | fixedcos
    dim: int = 8
    alpha: float = 10.0
    beta: float = 8.0

    def __post_init__(self):
        if self.kind not in ("none", "time2vec", "fixedcos"):
            raise ValueError(f"unknown time encoder {self.kind!r}")
        if self.kind != "none" and self.dim < 1:
            raise ValueError("time encoding dim must be >= 1")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("fixedcos alpha and beta must be positive")

    @property
    def width(self):
        return 0 if self.kind == "none" else self.dim


@dataclass
class ColumnStats:
    mean: float
    std: float  # zero stds are replaced by 1.0


@dataclass
class FeatureEncoder:
    """Fitted, deterministic statistics for every raw column."""

    numeric: dict[str, dict[str, ColumnStats]]  # table -> column -> stats
    vocab: dict[str, dict[str, dict[str, int]]]  # table -> column -> value -> index

    def oov_index(self, table, column):
        return len(self.vocab[table][column])

    def categorical_indices(self, table, column, values) -> np.ndarray:
        mapping = self.vocab[table][column]
        oov = len(mapping)
        return np.array([mapping.get(v, oov) for v in values], dtype=np.int64)

    def numeric_matrix(self, tdata: TableData, columns, rows) -> np.ndarray:
        """Standardized values plus a missingness indicator per column."""
        out = np.zeros((len(rows), 2 * len(columns)))
        for j, col in enumerate(columns):
            stats = self.numeric[tdata.name][col]
            vals = tdata.numeric[col][rows]
            missing = np.isnan(vals)
            std = out[:, 2 * j]
            std[:] = (vals - stats.mean) / stats.std
            std[missing] = 0.0
            out[:, 2 * j + 1] = missing.astype(np.float64)
        return out

    def state(self):
        return {
            "numeric": {
                t: {c: [s.mean, s.std] for c, s in cols.items()}
                for t, cols in self.numeric.items()
            },
            "vocab": {
                t: {c: sorted(m, key=m.get) for c, m in cols.items()}
                for t, cols in self.vocab.items()
            },
        }

    @classmethod
    def from_state(cls, state):
        numeric = {
            t: {c: ColumnStats(v[0], v[1]) for c, v in cols.items()}
            for t, cols in state["numeric"].items()
        }
        vocab = {
            t: {c: {v: i for i, v in enumerate(vals)} for c, vals in cols.items()}
            for t, cols in state["vocab"].items()
        }
        return cls(numeric, vocab)


def _numeric_columns(schema: SchemaDef, table):
    tdef = schema.table(table)
    return [a.name for a in tdef.attributes
            if a.kind in (ColumnKind.NUMERIC, ColumnKind.TIMESTAMP)]


def _categorical_columns(schema: SchemaDef, table):
    return [a.name for a in schema.table(table).attributes
            if a.kind is ColumnKind.CATEGORICAL]


def fit_encoders(db: Database, train_mask: dict[str, np.ndarray]) -> FeatureEncoder:
    """Compute column statistics from training rows only.

    ``train_mask`` holds one boolean array per table; a non-empty table whose
    mask selects nothing is an error, since its statistics would be undefined.
    """
    numeric: dict[str, dict[str, ColumnStats]] = {}
    vocab: dict[str, dict[str, dict[str, int]]] = {}
    for tdef in db.schema.tables:
        tdata = db.tables[tdef.name]
        mask = np.asarray(train_mask[tdef.name], dtype=bool)
        if mask.shape != (tdata.n_rows,):
            raise ValueError(f"{tdef.name}: train mask length mismatch")
        if tdata.n_rows > 0 and not mask.any():
            raise ValueError(f"{tdef.name}: empty training mask for a non-empty table")
        numeric[tdef.name] = {}
        for col in _numeric_columns(db.schema, tdef.name):
            vals = tdata.numeric[col][mask]
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                stats = ColumnStats(0.0, 1.0)
            else:
                std = float(vals.std())
                stats = ColumnStats(float(vals.mean()), std if std > 0 else 1.0)
            numeric[tdef.name][col] = stats
        vocab[tdef.name] = {}
        for col in _categorical_columns(db.schema, tdef.name):
            mapping: dict[str, int] = {}
            for v in (x for x, keep in zip(tdata.categorical[col], mask) if keep):
                if v not in mapping:
                    mapping[v] = len(mapping)
            vocab[tdef.name][col] = mapping
    return FeatureEncoder(numeric, vocab)


class NodeEncoder:
    """Learned projection of raw columns to ``d_model`` per node-type."""

    def __init__(self, schema: SchemaDef, encoder: FeatureEncoder, d_model,
                 time_cfg: TimeEncoderConfig, store: ParamStore, rng):
        self.schema = schema
        self.encoder = encoder
        self.d_model = d_model
        self.time_cfg = time_cfg
        self.store = store
        self._embed_width: dict[tuple[str, str], int] = {}
        if time_cfg.kind == "time2vec":
            store.create("encoder/time2vec/omega", (1, time_cfg.dim), rng, init="glorot")
            store.create("encoder/time2vec/phase", (1, time_cfg.dim), init="zeros")
        for tdef in schema.tables:
            t = tdef.name
            width = 0
            width += 2 * len(_numeric_columns(schema, t))
            for col in _categorical_columns(schema, t):
                n_vocab = len(encoder.vocab[t][col])
                w = max(1, min(MAX_EMBED_DIM, n_vocab))
                self._embed_width[(t, col)] = w
                store.create(f"encoder/{t}/embed/{col}", (n_vocab + 1, w), rng)
            width += time_cfg.width
            if width == 0:
                store.create(f"encoder/{t}/const", (1, d_model), rng)
            else:
                store.create(f"encoder/{t}/proj_w", (width, d_model), rng)
                store.create(f"encoder/{t}/proj_b", (1, d_model), init="zeros")

    def encode(self, db: Database, table, rows, seed_times=None) -> Tensor:
        """Initial embeddings for the given rows of one table.

        ``seed_times`` gives the serving seed time per row; the time block
        encodes (seed_time - row timestamp).  Types without a time column get
        a zero time block.
        """
        tdata = db.tables[table]
        rows = np.asarray(rows, dtype=np.int64)
        n = len(rows)
        blocks = []
        num_cols = _numeric_columns(self.schema, table)
        if num_cols:
            blocks.append(Tensor(self.encoder.numeric_matrix(tdata, num_cols, rows)))
        for col in _categorical_columns(self.schema, table):
            values = [tdata.categorical[col][i] for i in rows]
            idx = self.encoder.categorical_indices(table, col, values)
            blocks.append(T.row_gather(self.store[f"encoder/{table}/embed/{col}"], idx))
        cfg = self.time_cfg
        if cfg.kind != "none":
            tdef = self.schema.table(table)
            if tdef.time_column is None:
                blocks.append(Tensor(np.zeros((n, cfg.dim))))
            else:
                if seed_times is None:
                    raise ValueError(f"{table}: seed times required for time encoding")
                dt = (np.asarray(seed_times, dtype=np.float64)
                      - tdata.timestamps[rows].astype(np.float64))
                if cfg.kind == "time2vec":
                    arg = T.add(
                        T.matmul(Tensor(dt.reshape(-1, 1)),
                                 self.store["encoder/time2vec/omega"]),
                        self.store["encoder/time2vec/phase"],
                    )
                    blocks.append(T.sin(arg))
                else:
                    i = np.arange(1, cfg.dim + 1, dtype=np.float64)
                    omega = cfg.alpha ** (-(i - 1.0) / cfg.beta)
                    blocks.append(Tensor(np.cos(dt.reshape(-1, 1) * omega)))
        if not blocks:
            const = self.store[f"encoder/{table}/const"]
            return T.matmul(Tensor(np.ones((n, 1))), const)
        x = blocks[0] if len(blocks) == 1 else T.concat_cols(blocks)
        return T.add(
            T.matmul(x, self.store[f"encoder/{table}/proj_w"]),
            self.store[f"encoder/{table}/proj_b"],
        )
