"""Scikit-learn style estimators over relational databases.

The estimators keep the usual contract: hyperparameters in ``__init__`` (so
``get_params``/``set_params``/``clone`` work), data in ``fit``.  Because a
relational model consumes an entire database rather than a feature matrix,
``X`` is the (entity row, seed time) pairs to supervise and the database
itself is passed as a fit parameter.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .database import Database, EntityGraph, build_entity_graph
from .sampler import make_batches
from .train import TaskSpec, TaskTable, TrainConfig, train_loop
from .train import _forward, _seed_scores  # shared batch plumbing

__all__ = ["RelGNNClassifier", "RelGNNRegressor"]


def _as_graph(database) -> EntityGraph:
    if isinstance(database, EntityGraph):
        return database
    if isinstance(database, Database):
        return build_entity_graph(database)
    raise TypeError("database must be a Database or EntityGraph")


def _check_xy(X, y=None):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("X must be (n_samples, 2): entity row and seed time")
    rows = X[:, 0].astype(np.int64)
    times = X[:, 1].astype(np.int64)
    if y is None:
        return rows, times, None
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != len(rows):
        raise ValueError("X and y length mismatch")
    return rows, times, y


class _RelationalBase(BaseEstimator):
    _task_kind = None

    def __init__(self, entity_table=None, model="relgnn", d_model=32, layers=1,
                 heads=4, epochs=30, batch_size=512, lr=0.005, fanout=16,
                 patience=5, val_fraction=0.1, time_encoder="none", rpe=False,
                 random_state=0):
        self.entity_table = entity_table
        self.model = model
        self.d_model = d_model
        self.layers = layers
        self.heads = heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.fanout = fanout
        self.patience = patience
        self.val_fraction = val_fraction
        self.time_encoder = time_encoder
        self.rpe = rpe
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            model=self.model, d_model=self.d_model, layers=self.layers,
            heads=self.heads, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, fanout=self.fanout, patience=self.patience,
            rng_seed=self.random_state, val_fraction=self.val_fraction,
            test_fraction=0.0, rpe=self.rpe, time_encoder=self.time_encoder)

    def fit(self, X, y, *, database):
        """Train on (entity row, seed time) pairs with targets ``y``.

        ``database`` is the loaded :class:`Database` (or prebuilt graph) the
        entities live in.  A temporal validation slice drives early stopping.
        """
        if self.entity_table is None:
            raise ValueError("entity_table must be set before fitting")
        rows, times, y = _check_xy(X, y)
        if y is None:
            raise ValueError("y is required")
        self._validate_targets(y)
        graph = _as_graph(database)
        if self.entity_table not in graph.db.tables:
            raise ValueError(f"no table {self.entity_table!r} in the database")
        if len(rows) and rows.max() >= graph.n_nodes(self.entity_table):
            raise ValueError("entity row index out of range")
        spec = TaskSpec(kind=self._task_kind, entity_table=self.entity_table,
                        training_table_csv="<in-memory>")
        table = TaskTable(spec, rows, times, labels=y)
        report, payload = train_loop(graph, table, self._config())
        self.graph_ = graph
        self.report_ = report
        self.checkpoint_ = payload
        from .checkpoint import decode_params
        from .train import build_model
        from .encoding import FeatureEncoder

        feat_enc = FeatureEncoder.from_state(payload["encoder"])
        self.bundle_ = build_model(graph.schema, feat_enc, self._config(),
                                   self._task_kind)
        self.bundle_.store.load_state_arrays(decode_params(payload["params"]))
        return self

    def _raw_scores(self, X):
        check_is_fitted(self, "bundle_")
        rows, times, _ = _check_xy(X)
        batches = make_batches(self.entity_table, rows, times,
                               batch_size=self.batch_size)
        out = []
        for b, batch in enumerate(batches):
            rng = np.random.default_rng([self.random_state, 7, b])
            sub, h = _forward(self.bundle_, self.graph_, batch, rng)
            out.append(_seed_scores(self.bundle_, sub, h).data.ravel())
        return np.concatenate(out)

    def _validate_targets(self, y):
        raise NotImplementedError


class RelGNNClassifier(ClassifierMixin, _RelationalBase):
    """Binary entity classification over a relational database."""

    _task_kind = "classification"

    def _validate_targets(self, y):
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("classification targets must be binary 0/1")
        self.classes_ = np.array([0.0, 1.0])

    def decision_function(self, X):
        return self._raw_scores(X)

    def predict_proba(self, X):
        z = self._raw_scores(X)
        p = T.sigmoid(T.Tensor(z.reshape(-1, 1))).data.ravel()
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self._raw_scores(X) > 0).astype(np.float64)


class RelGNNRegressor(RegressorMixin, _RelationalBase):
    """Entity regression over a relational database."""

    _task_kind = "regression"

    def _validate_targets(self, y):
        if not np.all(np.isfinite(y)):
            raise ValueError("regression targets must be finite")

    def predict(self, X):
        return self._raw_scores(X)
