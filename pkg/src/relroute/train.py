"""Task loading, model assembly, and the training/evaluation loops.

Tasks are defined by a JSON file pointing at a training-table CSV with one
row per (entity, seed time, target).  Splits are temporal: rows are ordered
by timestamp and the earliest slice trains the model, so evaluation is always
on later data.  Column statistics are likewise fitted only on rows visible at
training time.

All randomness derives from named streams of the configured seed, which makes
one full run reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import losses, metrics
from . import tensor as T
from .checkpoint import (FORMAT_VERSION, CheckpointError, decode_params,
                         dump_checkpoint, encode_params, schema_hash)
from .database import Database, DataValidationError, EntityGraph, parse_timestamp
from .encoding import FeatureEncoder, NodeEncoder, TimeEncoderConfig, fit_encoders
from .model import (HeteroSAGE, MLPHead, RelGNN, RelGNNConfig, RpeConfig,
                    idgnn_candidates, rank_candidates, two_tower_scores)
from .params import ParamStore
from .sampler import FanoutConfig, SeedBatch, make_batches, temporal_route_sample
from .schema import SchemaDef, route_to_dict
from .tensor import Tape, Tensor

__all__ = [
    "TaskSpec",
    "TaskTable",
    "TrainConfig",
    "TrainingDiverged",
    "load_task",
    "load_task_table",
    "temporal_split",
    "training_masks",
    "ModelBundle",
    "build_model",
    "train_loop",
    "evaluate_checkpoint",
    "seed_sweep",
]

MODEL_KINDS = ("relgnn", "relgnn_noattn", "heterosage")


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # classification | regression | recommendation
    entity_table: str
    training_table_csv: str
    k: Optional[int] = None
    destination_table: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression", "recommendation"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "recommendation":
            if self.k is None or self.k < 1:
                raise ValueError("recommendation tasks need K >= 1")
            if not self.destination_table:
                raise ValueError("recommendation tasks need a destination_table")


def load_task(path) -> TaskSpec:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    csv_path = Path(doc["training_table_csv"])
    if not csv_path.is_absolute():
        csv_path = path.parent / csv_path
    return TaskSpec(
        kind=doc["kind"],
        entity_table=doc["entity_table"],
        training_table_csv=str(csv_path),
        k=doc.get("K"),
        destination_table=doc.get("destination_table"),
    )


@dataclass
class TaskTable:
    """Resolved training table: entity rows, seed times, and targets."""

    spec: TaskSpec
    entity_rows: np.ndarray
    timestamps: np.ndarray
    labels: Optional[np.ndarray] = None
    target_rows: Optional[list[np.ndarray]] = None  # recommendation only

    def __len__(self):
        return len(self.entity_rows)


def load_task_table(task: TaskSpec, db: Database) -> TaskTable:
    """Read the training-table CSV and resolve ids against the database."""
    path = Path(task.training_table_csv)
    if not path.is_file():
        raise DataValidationError(f"missing training table {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    value_col = "targets" if task.kind == "recommendation" else "label"
    expected = {"entity_id", "timestamp", value_col}
    if rows and set(rows[0]) != expected:
        raise DataValidationError(
            f"training table columns {sorted(rows[0])} != {sorted(expected)}"
        )
    pk_map = {v: i for i, v in enumerate(db.tables[task.entity_table].pk_values)}
    entity_rows = np.empty(len(rows), dtype=np.int64)
    timestamps = np.empty(len(rows), dtype=np.int64)
    labels = None
    target_rows = None
    if task.kind == "recommendation":
        dest_map = {v: i for i, v in
                    enumerate(db.tables[task.destination_table].pk_values)}
        target_rows = []
    else:
        labels = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        ent = row["entity_id"]
        if ent not in pk_map:
            raise DataValidationError(
                f"training table row {i}: unknown {task.entity_table} id {ent!r}"
            )
        entity_rows[i] = pk_map[ent]
        timestamps[i] = parse_timestamp(row["timestamp"])
        if task.kind == "recommendation":
            ids = [t for t in row["targets"].split(";") if t != ""]
            resolved = []
            for t in ids:
                if t not in dest_map:
                    raise DataValidationError(
                        f"training table row {i}: unknown "
                        f"{task.destination_table} id {t!r}"
                    )
                resolved.append(dest_map[t])
            target_rows.append(np.array(sorted(set(resolved)), dtype=np.int64))
        else:
            value = float(row["label"])
            if task.kind == "classification" and value not in (0.0, 1.0):
                raise DataValidationError(
                    f"training table row {i}: classification label must be 0 or 1"
                )
            labels[i] = value
    return TaskTable(task, entity_rows, timestamps, labels, target_rows)


@dataclass(frozen=True)
class TrainConfig:
    model: str = "relgnn"
    d_model: int = 32
    layers: int = 1
    heads: int = 4
    epochs: int = 30
    batch_size: int = 512
    lr: float = 0.005
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    fanout: int = 16
    patience: int = 5
    rng_seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    rpe: bool = False
    rpe_channels: int = 4
    rpe_alpha_init: float = 0.0
    time_encoder: str = "none"  # none | time2vec | fixedcos
    time_dim: int = 8
    time_alpha: float = 10.0
    time_beta: float = 8.0
    head: str = "auto"  # auto | mlp | idgnn | twotower

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def time_config(self) -> TimeEncoderConfig:
        return TimeEncoderConfig(self.time_encoder, self.time_dim,
                                 self.time_alpha, self.time_beta)


def temporal_split(timestamps, val_fraction=0.1, test_fraction=0.1):
    """Order rows by time and slice into train/val/test index arrays."""
    timestamps = np.asarray(timestamps)
    n = len(timestamps)
    order = np.argsort(timestamps, kind="stable")
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("temporal split leaves no training rows")
    return (order[:n_train], order[n_train:n_train + n_val],
            order[n_train + n_val:])


def training_masks(db: Database, max_train_time) -> dict[str, np.ndarray]:
    """Rows usable for statistics fitting: everything visible at train time."""
    masks = {}
    for tdef in db.schema.tables:
        tdata = db.tables[tdef.name]
        if tdata.timestamps is None:
            masks[tdef.name] = np.ones(tdata.n_rows, dtype=bool)
        else:
            masks[tdef.name] = tdata.timestamps <= max_train_time
    return masks


@dataclass
class ModelBundle:
    """Everything needed to run one model: params, encoder, core, head."""

    store: ParamStore
    encoder: NodeEncoder
    core: object  # RelGNN or HeteroSAGE
    head: Optional[MLPHead]
    cfg: TrainConfig
    feat_enc: FeatureEncoder

    @property
    def routes(self):
        return self.core.routes


def _head_kind(cfg: TrainConfig, task_kind: str) -> str:
    if cfg.head != "auto":
        return cfg.head
    return "idgnn" if task_kind == "recommendation" else "mlp"


def build_model(schema: SchemaDef, feat_enc: FeatureEncoder, cfg: TrainConfig,
                task_kind: str) -> ModelBundle:
    store = ParamStore()
    rng = np.random.default_rng([cfg.rng_seed, 0])
    encoder = NodeEncoder(schema, feat_enc, cfg.d_model, cfg.time_config(),
                          store, rng)
    rpe_cfg = (RpeConfig(channels=cfg.rpe_channels, alpha_init=cfg.rpe_alpha_init)
               if cfg.rpe else None)
    if cfg.model == "heterosage":
        core = HeteroSAGE(schema, RelGNNConfig(cfg.d_model, cfg.layers, cfg.heads),
                          store, rng)
    else:
        aggr = "attention" if cfg.model == "relgnn" else "sage"
        core = RelGNN(schema,
                      RelGNNConfig(cfg.d_model, cfg.layers, cfg.heads,
                                   aggregator=aggr, rpe=rpe_cfg),
                      store, rng)
    head = None
    if _head_kind(cfg, task_kind) in ("mlp", "idgnn"):
        head = MLPHead(store, rng, cfg.d_model)
    return ModelBundle(store, encoder, core, head, cfg, feat_enc)


def _forward(bundle: ModelBundle, graph: EntityGraph, batch: SeedBatch, rng):
    sub = temporal_route_sample(graph, bundle.routes, batch,
                                FanoutConfig.uniform(bundle.cfg.fanout),
                                bundle.cfg.layers, rng,
                                expand_destinations=bundle.core.expand_destinations)
    h0 = {}
    for t in sorted(sub.nodes):
        tn = sub.nodes[t]
        h0[t] = bundle.encoder.encode(graph.db, t, tn.globals_,
                                      batch.seed_times[tn.seed_idx])
    h = bundle.core.forward(sub, h0)
    return sub, h


def _seed_scores(bundle, sub, h) -> Tensor:
    seed_h = T.row_gather(h[sub.seed_type], sub.seed_locals())
    return bundle.head(seed_h)


def _rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    ones = Tensor(np.ones((a.cols, 1)))
    return T.matmul(T.mul(a, b), ones)


def _batch_loss(bundle, graph, table: TaskTable, batch: SeedBatch, rng, neg_rng):
    kind = table.spec.kind
    sub, h = _forward(bundle, graph, batch, rng)
    if kind == "classification":
        return losses.bce_loss(_seed_scores(bundle, sub, h), batch.labels)
    if kind == "regression":
        return losses.l1_loss(_seed_scores(bundle, sub, h),
                              np.asarray(batch.labels).reshape(-1, 1))
    if _head_kind(bundle.cfg, kind) == "twotower":
        return _twotower_loss(bundle, graph, table, batch, h, sub, rng, neg_rng)
    locals_, globals_, element = idgnn_candidates(sub, table.spec.destination_table)
    if len(locals_) == 0:
        return None
    gt = [set(table.target_rows[r]) for r in batch.row_indices]
    y = np.array([1.0 if int(g) in gt[int(e)] else 0.0
                  for g, e in zip(globals_, element)]).reshape(-1, 1)
    scores = bundle.head(T.row_gather(h[table.spec.destination_table], locals_))
    return losses.bce_loss(scores, y)


def _twotower_loss(bundle, graph, table, batch, h, sub, rng, neg_rng):
    pos_src, pos_dst, times = [], [], []
    for i, r in enumerate(batch.row_indices):
        for t in table.target_rows[r]:
            pos_src.append(i)
            pos_dst.append(t)
            times.append(batch.seed_times[i])
    if not pos_src:
        return None
    n_dest = graph.n_nodes(table.spec.destination_table)
    neg_dst = neg_rng.integers(0, n_dest, size=len(pos_dst))
    dest_batch = SeedBatch(table.spec.destination_table,
                           np.concatenate([pos_dst, neg_dst]),
                           np.concatenate([times, times]))
    _, h_dest = _forward(bundle, graph, dest_batch, rng)
    dest_h = T.row_gather(h_dest[table.spec.destination_table],
                          np.arange(2 * len(pos_dst), dtype=np.int64))
    src_h = T.row_gather(h[sub.seed_type], np.array(pos_src, dtype=np.int64))
    pos_h = T.row_gather(dest_h, np.arange(len(pos_dst), dtype=np.int64))
    neg_h = T.row_gather(dest_h, len(pos_dst) + np.arange(len(pos_dst), dtype=np.int64))
    return losses.bpr_loss(_rowwise_dot(src_h, pos_h), _rowwise_dot(src_h, neg_h))


def _eval_loss(bundle, graph, table: TaskTable, rows, stream) -> float:
    """Mean task loss over a split (no gradient tracking)."""
    rows = np.asarray(rows)
    batches = make_batches(table.spec.entity_table, table.entity_rows[rows],
                           table.timestamps[rows],
                           None if table.labels is None else table.labels[rows],
                           batch_size=bundle.cfg.batch_size)
    neg_rng = np.random.default_rng(stream + [99])
    total, n = 0.0, 0
    for b, batch in enumerate(batches):
        batch.row_indices = rows[batch.row_indices]
        loss = _batch_loss(bundle, graph, table, batch,
                           np.random.default_rng(stream + [b]), neg_rng)
        if loss is not None:
            total += loss.item() * len(batch)
            n += len(batch)
    return total / max(1, n)


def _eval_metric(bundle, graph, table: TaskTable, rows, stream) -> float:
    """Metric on a split: ROC-AUC, MAE, or MAP@K depending on the task."""
    kind = table.spec.kind
    cfg = bundle.cfg
    rows = np.asarray(rows)
    batches = make_batches(table.spec.entity_table, table.entity_rows[rows],
                           table.timestamps[rows],
                           None if table.labels is None else table.labels[rows],
                           batch_size=cfg.batch_size)
    for batch in batches:
        batch.row_indices = rows[batch.row_indices]
    if kind in ("classification", "regression"):
        scores, labels = [], []
        for b, batch in enumerate(batches):
            sub, h = _forward(bundle, graph, batch,
                              np.random.default_rng(stream + [b]))
            scores.append(_seed_scores(bundle, sub, h).data.ravel())
            labels.append(batch.labels)
        scores = np.concatenate(scores)
        labels = np.concatenate(labels)
        if kind == "classification":
            return metrics.roc_auc(scores, labels)
        return metrics.mae(scores, labels)
    rankings, truths = [], []
    use_twotower = _head_kind(cfg, kind) == "twotower"
    for b, batch in enumerate(batches):
        rng = np.random.default_rng(stream + [b])
        sub, h = _forward(bundle, graph, batch, rng)
        gt_rows = [table.target_rows[r] for r in batch.row_indices]
        if use_twotower:
            ranked = _twotower_rank(bundle, graph, table, batch, sub, h, rng)
        else:
            ranked = _idgnn_rank(bundle, table, sub, h, len(batch))
        for i in range(len(batch)):
            rankings.append(ranked[i])
            truths.append(set(int(x) for x in gt_rows[i]))
    return metrics.map_at_k(rankings, truths, table.spec.k)


def _idgnn_rank(bundle, table, sub, h, n_elements):
    locals_, globals_, element = idgnn_candidates(sub, table.spec.destination_table)
    ranked = [[] for _ in range(n_elements)]
    if len(locals_) == 0:
        return ranked
    scores = bundle.head(
        T.row_gather(h[table.spec.destination_table], locals_)).data.ravel()
    for e in range(n_elements):
        mask = element == e
        ranked[e] = [gid for gid, _ in
                     rank_candidates(globals_[mask], scores[mask])]
    return ranked


def _twotower_rank(bundle, graph, table, batch, sub, h, rng):
    dest_t = table.spec.destination_table
    n_dest = graph.n_nodes(dest_t)
    all_dest = np.arange(n_dest, dtype=np.int64)
    src_h = T.row_gather(h[sub.seed_type], sub.seed_locals())
    ranked = []
    for i in range(len(batch)):
        dest_batch = SeedBatch(dest_t, all_dest,
                               np.full(n_dest, batch.seed_times[i]))
        _, h_dest = _forward(bundle, graph, dest_batch, rng)
        dest_h = T.row_gather(h_dest[dest_t], np.arange(n_dest, dtype=np.int64))
        one_src = T.row_gather(src_h, np.array([i], dtype=np.int64))
        scores = two_tower_scores(one_src, dest_h).data.ravel()
        ranked.append([gid for gid, _ in rank_candidates(all_dest, scores)])
    return ranked


_METRIC_NAME = {"classification": "roc_auc", "regression": "mae",
                "recommendation": "map_at_k"}


def train_loop(graph: EntityGraph, table: TaskTable, cfg: TrainConfig):
    """Train one model; returns ``(report_dict, checkpoint_payload)``.

    Early stopping and checkpoint selection monitor the validation loss
    (the task metric on tiny validation splits is too coarse to rank
    checkpoints); the reported per-epoch validation metric is the task
    metric.  Raises :class:`TrainingDiverged` when the loss goes non-finite.
    """
    db = graph.db
    train_idx, val_idx, test_idx = temporal_split(
        table.timestamps, cfg.val_fraction, cfg.test_fraction)
    max_train_time = int(table.timestamps[train_idx].max())
    feat_enc = fit_encoders(db, training_masks(db, max_train_time))
    bundle = build_model(db.schema, feat_enc, cfg, table.spec.kind)
    optimizer = losses.Adam(bundle.store.tensors(), lr=cfg.lr,
                            betas=cfg.betas, eps=cfg.eps)
    best_loss = np.inf
    best_state = bundle.store.state_arrays()
    best_epoch = -1
    stall = 0
    train_losses = []
    val_history = []
    val_losses = []
    for epoch in range(cfg.epochs):
        shuffle_rng = np.random.default_rng([cfg.rng_seed, 1, epoch])
        neg_rng = np.random.default_rng([cfg.rng_seed, 6, epoch])
        batches = make_batches(
            table.spec.entity_table, table.entity_rows[train_idx],
            table.timestamps[train_idx],
            None if table.labels is None else table.labels[train_idx],
            batch_size=cfg.batch_size, shuffle=True, rng=shuffle_rng)
        for batch in batches:
            batch.row_indices = train_idx[batch.row_indices]
        epoch_loss = 0.0
        n_batches = 0
        for b, batch in enumerate(batches):
            sample_rng = np.random.default_rng([cfg.rng_seed, 2, epoch, b])
            with Tape() as tape:
                loss = _batch_loss(bundle, graph, table, batch, sample_rng, neg_rng)
                if loss is None:
                    continue
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {b}")
                tape.backward(loss, params=bundle.store.tensors())
            optimizer.step()
            optimizer.zero_grad()
            epoch_loss += value
            n_batches += 1
        train_losses.append(epoch_loss / max(1, n_batches))
        if len(val_idx):
            val = _eval_metric(bundle, graph, table, val_idx,
                               [cfg.rng_seed, 3, epoch])
            vloss = _eval_loss(bundle, graph, table, val_idx,
                               [cfg.rng_seed, 3, epoch])
        else:
            val = float("nan")
            vloss = train_losses[-1]
        val_history.append(val)
        val_losses.append(vloss)
        if vloss < best_loss:
            best_loss = vloss
            best_state = bundle.store.state_arrays()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    bundle.store.load_state_arrays(best_state)
    report = {
        "task": table.spec.kind,
        "model": cfg.model,
        "seed": cfg.rng_seed,
        "metric": _METRIC_NAME[table.spec.kind],
        "epochs_run": len(train_losses),
        "best_epoch": best_epoch,
        "train_loss": train_losses,
        "val_history": val_history,
        "val_loss": val_losses,
        "metrics": {},
    }
    if len(val_idx):
        report["metrics"]["val"] = val_history[best_epoch]
    if len(test_idx):
        report["metrics"]["test"] = _eval_metric(bundle, graph, table, test_idx,
                                                 [cfg.rng_seed, 4])
    payload = {
        "format_version": FORMAT_VERSION,
        "model": cfg.model,
        "schema_sha256": schema_hash(db.schema),
        "train_config": _config_dict(cfg),
        "routes": [route_to_dict(r) for r in bundle.routes],
        "encoder": feat_enc.state(),
        "params": encode_params(bundle.store.state_arrays()),
    }
    return report, payload


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["betas"] = tuple(d["betas"])
    return TrainConfig(**d)


def evaluate_checkpoint(payload: dict, graph: EntityGraph, table: TaskTable):
    """Recompute metrics for a stored model against a database and task."""
    db = graph.db
    if payload["schema_sha256"] != schema_hash(db.schema):
        raise CheckpointError(
            "schema hash mismatch: checkpoint was trained on a different schema")
    cfg = _config_from_dict(payload["train_config"])
    feat_enc = FeatureEncoder.from_state(payload["encoder"])
    bundle = build_model(db.schema, feat_enc, cfg, table.spec.kind)
    bundle.store.load_state_arrays(decode_params(payload["params"]))
    _, val_idx, test_idx = temporal_split(table.timestamps, cfg.val_fraction,
                                          cfg.test_fraction)
    out = {"model": cfg.model, "seed": cfg.rng_seed,
           "metric": _METRIC_NAME[table.spec.kind], "metrics": {}}
    if len(val_idx):
        out["metrics"]["val"] = _eval_metric(bundle, graph, table, val_idx,
                                             [cfg.rng_seed, 5])
    if len(test_idx):
        out["metrics"]["test"] = _eval_metric(bundle, graph, table, test_idx,
                                              [cfg.rng_seed, 4])
    return out


def seed_sweep(graph: EntityGraph, table: TaskTable, cfg: TrainConfig, seeds):
    """Train once per seed; returns per-seed reports plus mean/std summary."""
    from dataclasses import replace

    reports = []
    for seed in seeds:
        report, _ = train_loop(graph, table, replace(cfg, rng_seed=int(seed)))
        reports.append(report)
    tests = [r["metrics"]["test"] for r in reports if "test" in r["metrics"]]
    summary = {}
    if tests:
        arr = np.asarray(tests, dtype=np.float64)
        summary = {"mean": float(arr.mean()),
                   "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}
    return {"seeds": list(map(int, seeds)), "reports": reports,
            "test_summary": summary}
