"""Message-passing models over sampled subgraphs.

``RelGNN`` aggregates along atomic routes: for a composite route each
junction row is fused with its unique source row (a learned linear
combination), and the destination attends over the fused neighbors with
multi-head attention (or a mean aggregator for the ablation variant).
Messages from all routes ending at a type are summed, with ReLU between
layers and no activation after the last one.  Types that are never a route
destination keep their initial embeddings, acting as pure relays.

``HeteroSAGE`` is the conventional baseline: one graph hop per layer over raw
foreign-key edges in both directions, with per-relation weights and a mean
aggregator.  Completing a source -> junction -> destination exchange therefore
takes two of its layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .params import ParamStore
from .sampler import SampledSubgraph
from .schema import (AtomicRoute, SchemaDef, build_schema_graph,
                     derive_atomic_routes, edge_relations, schema_laplacian)
from .tensor import Tensor, sym_eig

__all__ = [
    "RpeConfig",
    "RelGNNConfig",
    "fuse",
    "attn_aggr",
    "sage_aggr",
    "RelGNN",
    "HeteroSAGE",
    "MLPHead",
    "idgnn_candidates",
    "two_tower_scores",
    "rank_candidates",
]


@dataclass(frozen=True)
class RpeConfig:
    """Spectral type-pair encoding derived from the table-graph Laplacian."""

    channels: int = 4
    hidden: int = 16
    alpha_init: float = 0.0


@dataclass(frozen=True)
class RelGNNConfig:
    d_model: int = 32
    layers: int = 1
    heads: int = 4
    aggregator: str = "attention"  # "attention" | "sage"
    rpe: Optional[RpeConfig] = None

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.d_model < self.heads or self.d_model % self.heads != 0:
            raise ValueError("d_model must be a positive multiple of heads")
        if self.aggregator not in ("attention", "sage"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


def fuse(h_mid: Tensor, h_src: Tensor, w_mid: Tensor, w_src: Tensor) -> Tensor:
    """Combine each junction row with its unique source row.

    Computes ``h_mid @ w_mid + h_src @ w_src`` rowwise; the two inputs must
    be aligned so row i of ``h_mid`` references row i of ``h_src``.
    """
    if h_mid.rows != h_src.rows:
        raise T.ShapeError("fuse inputs must pair one source row per junction row")
    return T.add(T.matmul(h_mid, w_mid), T.matmul(h_src, w_src))


def _head_selector(d, heads):
    dk = d // heads
    s = np.zeros((d, heads))
    for h in range(heads):
        s[h * dk:(h + 1) * dk, h] = 1.0
    return s


def attn_aggr(h_dst: Tensor, h_fuse: Tensor, segment_ids, wq, wk, wv, wproj,
              heads: int) -> Tensor:
    """Multi-head attention over each destination's fused neighbors.

    Output row i is ``h_dst[i] @ wproj + sum_j alpha_ij (h_fuse[j] @ wv)``
    where the coefficients are a per-head softmax of scaled query-key dot
    products over segment i.  Destinations with no neighbors receive only the
    projection term.
    """
    d = h_dst.cols
    if d % heads != 0:
        raise T.ShapeError("embedding width must be divisible by the head count")
    out = T.matmul(h_dst, wproj)
    if h_fuse.rows == 0:
        return out
    dk = d // heads
    sel = Tensor(_head_selector(d, heads))
    q = T.row_gather(T.matmul(h_dst, wq), segment_ids)
    k = T.matmul(h_fuse, wk)
    v = T.matmul(h_fuse, wv)
    logits = T.scalar_mul(T.matmul(T.mul(q, k), sel), 1.0 / np.sqrt(dk))
    alpha = T.segment_softmax(logits, segment_ids)
    weighted = T.mul(T.matmul(alpha, sel.T), v)
    return T.add(out, T.segment_sum(weighted, segment_ids, h_dst.rows))


def sage_aggr(h_dst: Tensor, h_fuse: Tensor, segment_ids, wv, wproj) -> Tensor:
    """Mean aggregation over fused neighbors (the no-attention variant)."""
    out = T.matmul(h_dst, wproj)
    if h_fuse.rows == 0:
        return out
    mean = T.segment_mean(h_fuse, segment_ids, h_dst.rows)
    return T.add(out, T.matmul(mean, wv))


def _mlp_1d(store, rng, name, width_in, hidden, width_out):
    store.create(f"{name}/w1", (width_in, hidden), rng)
    store.create(f"{name}/b1", (1, hidden), init="zeros")
    store.create(f"{name}/w2", (hidden, width_out), rng)
    store.create(f"{name}/b2", (1, width_out), init="zeros")


def _mlp_apply(store, name, x):
    h = T.relu(T.add(T.matmul(x, store[f"{name}/w1"]), store[f"{name}/b1"]))
    return T.add(T.matmul(h, store[f"{name}/w2"]), store[f"{name}/b2"])


class _SpectralBias:
    """Learned per-(src type, dst type) message offsets from the table graph.

    The Laplacian of the undirected table graph is eigendecomposed once.
    Each channel applies a small learned map to the eigenvalue vector and
    reconstructs an N x N matrix through the fixed eigenvectors; a second
    learned map projects the channel stack for a type pair to an embedding
    offset, gated by a learnable scalar.  Gradients flow only through the
    learned maps and the gate, never through the decomposition.
    """

    def __init__(self, schema: SchemaDef, cfg: RpeConfig, d_model, store, rng):
        self.cfg = cfg
        graph = build_schema_graph(schema)
        self.type_index = {name: i for i, name in enumerate(graph.nodes)}
        lap = schema_laplacian(graph)
        eigvals, eigvecs = sym_eig(lap)
        self.eigvals = eigvals
        self.eigvecs = eigvecs
        self.store = store
        for k in range(cfg.channels):
            _mlp_1d(store, rng, f"rpe/phi{k}", 1, cfg.hidden, 1)
        _mlp_1d(store, rng, f"rpe/rho", cfg.channels, cfg.hidden, d_model)
        store.create("rpe/alpha", (1, 1), init=cfg.alpha_init)

    def pair_channels(self, src_type, dst_type, phi_fns=None) -> Tensor:
        """Channel vector for one type pair; ``phi_fns`` overrides the
        learned per-channel maps (used for analytic checks)."""
        i = self.type_index[src_type]
        j = self.type_index[dst_type]
        vivj = Tensor((self.eigvecs[i] * self.eigvecs[j]).reshape(1, -1))
        lam = Tensor(self.eigvals.reshape(-1, 1))
        cols = []
        for k in range(self.cfg.channels):
            if phi_fns is not None:
                phi_out = phi_fns[k](lam)
            else:
                phi_out = _mlp_apply(self.store, f"rpe/phi{k}", lam)
            cols.append(T.matmul(vivj, phi_out))
        return cols[0] if len(cols) == 1 else T.concat_cols(cols)

    def offset(self, src_type, dst_type) -> Tensor:
        """The gated 1 x d offset added to every message of this type pair."""
        row = _mlp_apply(self.store, "rpe/rho", self.pair_channels(src_type, dst_type))
        return T.matmul(self.store["rpe/alpha"], row)


class RelGNN:
    """Composite message passing over atomic routes."""

    def __init__(self, schema: SchemaDef, config: RelGNNConfig, store: ParamStore,
                 rng, routes=None):
        self.schema = schema
        self.config = config
        self.store = store
        self.routes = list(routes) if routes is not None else derive_atomic_routes(schema)
        self._routes_into: dict[str, list[AtomicRoute]] = {}
        for r in self.routes:
            self._routes_into.setdefault(r.dst_type, []).append(r)
        d = config.d_model
        for layer in range(1, config.layers + 1):
            for r in self.routes:
                base = f"layer{layer}/route{r.route_id}"
                if r.is_composite:
                    store.create(f"{base}/w_mid", (d, d), rng)
                    store.create(f"{base}/w_src", (d, d), rng)
                if config.aggregator == "attention":
                    store.create(f"{base}/wq", (d, d), rng)
                    store.create(f"{base}/wk", (d, d), rng)
                store.create(f"{base}/wv", (d, d), rng)
                store.create(f"{base}/wproj", (d, d), rng)
        self.rpe = (_SpectralBias(schema, config.rpe, d, store, rng)
                    if config.rpe is not None else None)

    #: route-style sampling: a node is updated once, at the layer it was
    #: sampled for
    expand_destinations = False

    @property
    def n_layers(self):
        return self.config.layers

    def forward(self, sub: SampledSubgraph, h0: dict[str, Tensor]) -> dict[str, Tensor]:
        """Run all layers over the sampled blocks; returns final embeddings
        for every local node table (seed rows come first in their type)."""
        h = dict(h0)
        n_layers = len(sub.layers)
        rpe_offsets = {}
        if self.rpe is not None:
            for r in self.routes:
                key = (r.src_type, r.dst_type)
                if key not in rpe_offsets:
                    rpe_offsets[key] = self.rpe.offset(*key)
        for li, layer in enumerate(sub.layers, start=1):
            blocks = {b.route_id: b for b in layer.blocks}
            updates = []
            for dst_t in sorted(layer.dst_locals):
                routes_in = self._routes_into.get(dst_t)
                if not routes_in:
                    continue
                d_locals = layer.dst_locals[dst_t]
                if len(d_locals) == 0:
                    continue
                h_dst = T.row_gather(h[dst_t], d_locals)
                msg = None
                for route in routes_in:
                    m = self._route_message(h, h_dst, route, blocks.get(route.route_id), li)
                    if self.rpe is not None:
                        m = T.add(m, rpe_offsets[(route.src_type, route.dst_type)])
                    msg = m if msg is None else T.add(msg, m)
                if li < n_layers:
                    msg = T.relu(msg)
                updates.append((dst_t, d_locals, msg))
            for dst_t, d_locals, msg in updates:
                h[dst_t] = T.row_scatter(h[dst_t], d_locals, msg)
        return h

    def _route_message(self, h, h_dst, route, block, layer):
        p = lambda name: self.store[f"layer{layer}/route{route.route_id}/{name}"]
        d = self.config.d_model
        if block is None:
            seg = np.zeros(0, dtype=np.int64)
            h_fuse = Tensor(np.zeros((0, d)))
        elif route.is_composite:
            h_mid = T.row_gather(h[route.mid_type], block.mid_local)
            h_src = T.row_gather(h[route.src_type], block.src_local)
            h_fuse = fuse(h_mid, h_src, p("w_mid"), p("w_src"))
            seg = block.dst_pos
        else:
            h_fuse = T.row_gather(h[route.src_type], block.src_local)
            seg = block.dst_pos
        if self.config.aggregator == "attention":
            return attn_aggr(h_dst, h_fuse, seg, p("wq"), p("wk"), p("wv"),
                             p("wproj"), self.config.heads)
        return sage_aggr(h_dst, h_fuse, seg, p("wv"), p("wproj"))


class HeteroSAGE:
    """Per-relation mean aggregation over raw FK edges, one hop per layer."""

    def __init__(self, schema: SchemaDef, config: RelGNNConfig, store: ParamStore,
                 rng, relations=None):
        self.schema = schema
        self.config = config
        self.store = store
        self.routes = list(relations) if relations is not None else edge_relations(schema)
        self._relations_into: dict[str, list[AtomicRoute]] = {}
        for r in self.routes:
            self._relations_into.setdefault(r.dst_type, []).append(r)
        d = config.d_model
        for layer in range(1, config.layers + 1):
            for r in self.routes:
                store.create(f"layer{layer}/rel{r.route_id}/w", (d, d), rng)
            for t in schema.table_names():
                store.create(f"layer{layer}/self/{t}", (d, d), rng)

    #: step l+2 of the two-hop exchange reads the destination's own updated
    #: step-(l+1) state, so destinations stay in the sampling frontier
    expand_destinations = True

    @property
    def n_layers(self):
        return self.config.layers

    def forward(self, sub: SampledSubgraph, h0: dict[str, Tensor]) -> dict[str, Tensor]:
        h = dict(h0)
        for li, layer in enumerate(sub.layers, start=1):
            blocks = {b.route_id: b for b in layer.blocks}
            updates = []
            for dst_t in sorted(layer.dst_locals):
                d_locals = layer.dst_locals[dst_t]
                if len(d_locals) == 0:
                    continue
                h_dst = T.row_gather(h[dst_t], d_locals)
                msg = T.matmul(h_dst, self.store[f"layer{li}/self/{dst_t}"])
                for rel in self._relations_into.get(dst_t, ()):
                    block = blocks.get(rel.route_id)
                    if block is None:
                        continue
                    h_src = T.row_gather(h[rel.src_type], block.src_local)
                    mean = T.segment_mean(h_src, block.dst_pos, len(d_locals))
                    msg = T.add(msg, T.matmul(mean, self.store[f"layer{li}/rel{rel.route_id}/w"]))
                updates.append((dst_t, d_locals, T.relu(msg)))
            for dst_t, d_locals, msg in updates:
                h[dst_t] = T.row_scatter(h[dst_t], d_locals, msg)
        return h


class MLPHead:
    """Two affine layers with a ReLU between; emits raw scores (no sigmoid).

    The output layer starts at zero so an untrained model scores every input
    identically; early validation metrics then reflect learned signal rather
    than projection luck.
    """

    def __init__(self, store: ParamStore, rng, d_model, hidden=None, name="head/mlp"):
        self.store = store
        self.name = name
        hidden = hidden or d_model
        store.create(f"{name}/w1", (d_model, hidden), rng)
        store.create(f"{name}/b1", (1, hidden), init="zeros")
        store.create(f"{name}/w2", (hidden, 1), init="zeros")
        store.create(f"{name}/b2", (1, 1), init="zeros")

    def __call__(self, h: Tensor) -> Tensor:
        return _mlp_apply(self.store, self.name, h)


def idgnn_candidates(sub: SampledSubgraph, target_type):
    """In-subgraph scoring candidates per seed element.

    Returns ``(locals, globals, element)`` arrays with each (element, global)
    pair listed once, keeping the first sampled instance.  An absent target
    type yields empty arrays: entities outside the sampled neighborhood are
    simply not scorable.
    """
    tn = sub.nodes.get(target_type)
    if tn is None or len(tn) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    seen = set()
    locals_, globals_, element = [], [], []
    for i in range(len(tn)):
        key = (int(tn.seed_idx[i]), int(tn.globals_[i]))
        if key in seen:
            continue
        seen.add(key)
        locals_.append(i)
        globals_.append(tn.globals_[i])
        element.append(tn.seed_idx[i])
    order = np.lexsort((np.array(globals_), np.array(element)))
    return (np.array(locals_, dtype=np.int64)[order],
            np.array(globals_, dtype=np.int64)[order],
            np.array(element, dtype=np.int64)[order])


def two_tower_scores(h_src: Tensor, h_dst: Tensor) -> Tensor:
    """Pairwise inner products: one row per source, one column per target."""
    return T.matmul(h_src, T.transpose(h_dst))


def rank_candidates(ids, scores):
    """Sort (id, score) pairs by descending score, ascending id on ties."""
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))
    return [(ids[i], float(scores[i])) for i in order]
