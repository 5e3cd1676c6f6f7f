"""Temporal, route-aware neighbor sampling.

Sampling walks from the seed entities outward, one model layer at a time.
For a composite route the sampling unit is the whole (dst, mid, src) triple:
eligible junction rows are drawn first, then each one's unique source row is
attached through its other foreign key.  Every sampled node serves exactly
one batch element and is only admitted when its timestamp does not exceed
that element's seed time, so no future information can leak into a subgraph.

Each batch element gets its own independent neighborhood (sampled nodes are
never shared between elements), which keeps the procedure deterministic for
a fixed generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .database import NULL_INDEX, EntityGraph
from .schema import AtomicRoute

__all__ = [
    "SeedBatch",
    "FanoutConfig",
    "TypeNodes",
    "RouteBlock",
    "LayerSample",
    "SampledSubgraph",
    "temporal_route_sample",
    "make_batches",
    "leakage_violations",
]


@dataclass
class SeedBatch:
    """Entities to predict for, each at its own seed time."""

    node_type: str
    node_ids: np.ndarray
    seed_times: np.ndarray
    labels: Optional[np.ndarray] = None
    row_indices: Optional[np.ndarray] = None  # positions in the originating task table

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.seed_times = np.asarray(self.seed_times, dtype=np.int64)
        if self.node_ids.shape != self.seed_times.shape:
            raise ValueError("node_ids and seed_times must have equal length")

    def __len__(self):
        return len(self.node_ids)


class FanoutConfig:
    """Per (route, layer) cap on sampled neighbors per destination."""

    def __init__(self, table: dict[tuple[int, int], int]):
        for key, v in table.items():
            if v < 1:
                raise ValueError(f"fanout for {key} must be >= 1")
        self._table = dict(table)
        self._default = None

    @classmethod
    def uniform(cls, value: int) -> "FanoutConfig":
        if value < 1:
            raise ValueError("fanout must be >= 1")
        cfg = cls({})
        cfg._default = int(value)
        return cfg

    def get(self, route_id: int, layer: int) -> int:
        if (route_id, layer) in self._table:
            return self._table[(route_id, layer)]
        if self._default is not None:
            return self._default
        raise KeyError(f"fanout missing for route {route_id}, layer {layer}")


@dataclass
class TypeNodes:
    """Local node instances of one type: global row + serving batch element."""

    globals_: np.ndarray
    seed_idx: np.ndarray

    def __len__(self):
        return len(self.globals_)


@dataclass
class RouteBlock:
    """Sampled adjacency for one route at one layer.

    ``dst_pos`` indexes into the layer's destination list for the route's
    destination type and is sorted ascending; ``src_local`` (and ``mid_local``
    for composite routes) index into the per-type local node tables.
    """

    route_id: int
    dst_pos: np.ndarray
    src_local: np.ndarray
    mid_local: Optional[np.ndarray] = None


@dataclass
class LayerSample:
    dst_locals: dict[str, np.ndarray]
    blocks: list[RouteBlock] = field(default_factory=list)


@dataclass
class SampledSubgraph:
    seed_type: str
    n_seeds: int
    nodes: dict[str, TypeNodes]
    layers: list[LayerSample]  # layers[0] is the deepest; layers[-1] updates the seeds

    def seed_locals(self) -> np.ndarray:
        return np.arange(self.n_seeds, dtype=np.int64)


class _Registry:
    """Append-only per-type tables of (global row, serving element)."""

    def __init__(self):
        self._globals: dict[str, list[np.ndarray]] = {}
        self._seed_idx: dict[str, list[np.ndarray]] = {}
        self._counts: dict[str, int] = {}

    def append(self, node_type, globals_, seed_idx):
        start = self._counts.get(node_type, 0)
        self._globals.setdefault(node_type, []).append(np.asarray(globals_, dtype=np.int64))
        self._seed_idx.setdefault(node_type, []).append(np.asarray(seed_idx, dtype=np.int64))
        self._counts[node_type] = start + len(globals_)
        return np.arange(start, self._counts[node_type], dtype=np.int64)

    def finalize(self) -> dict[str, TypeNodes]:
        return {
            t: TypeNodes(np.concatenate(self._globals[t]), np.concatenate(self._seed_idx[t]))
            for t in self._globals
        }


def _expand_csr(indptr, indices, rows):
    """All CSR list entries for ``rows``, with the owning row position."""
    counts = indptr[rows + 1] - indptr[rows]
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    owner = np.repeat(np.arange(len(rows), dtype=np.int64), counts)
    starts = np.repeat(indptr[rows], counts)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, indices[starts + offsets]


def _sample_per_group(group, fanout, rng):
    """Uniform without-replacement sample of up to ``fanout`` rows per group.

    ``group`` must be sorted ascending.  Returns selected positions, sorted,
    so the output stays grouped by destination.
    """
    n = len(group)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    keys = rng.random(n)
    order = np.lexsort((keys, group))
    g_sorted = group[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    sizes = np.diff(np.r_[starts, n])
    within = np.arange(n) - np.repeat(starts, sizes)
    selected = order[within < fanout]
    selected.sort()
    return selected


def _temporal_ok(graph: EntityGraph, table, rows, limits):
    ts = graph.timestamps(table)
    if ts is None:
        return np.ones(len(rows), dtype=bool)
    return ts[rows] <= limits


def temporal_route_sample(graph: EntityGraph, routes, seeds: SeedBatch,
                          fanout: FanoutConfig, layers: int,
                          rng, expand_destinations=False) -> SampledSubgraph:
    """Sample a per-element temporal subgraph around the seed batch.

    ``rng`` is either an integer seed or a ``numpy.random.Generator``; all
    randomness flows through it, so identical inputs yield identical output.

    By default each layer's destinations are exactly the previous layer's
    sampled sources (route-style message passing updates a node once).  With
    ``expand_destinations`` the current destinations stay in the frontier, so
    they also receive updates at every deeper layer; conventional multi-hop
    GNNs need this because step l+2 reads the destination's own step-(l+1)
    state.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    for r in routes:
        key = (r.fk_table, r.fk_dst_column if r.is_composite else r.fk_column)
        if key not in graph.forward:
            raise ValueError(f"unknown route: no foreign key {key} in the graph")

    registry = _Registry()
    seed_locals = registry.append(seeds.node_type, seeds.node_ids,
                                  np.arange(len(seeds), dtype=np.int64))
    frontier: dict[str, np.ndarray] = {seeds.node_type: seed_locals}
    # Local metadata is accumulated incrementally so eligibility checks can
    # use each instance's serving seed time before finalize().
    local_globals = {seeds.node_type: [seeds.node_ids]}
    local_seed = {seeds.node_type: [np.arange(len(seeds), dtype=np.int64)]}

    def lookup(node_type, locals_):
        g = np.concatenate(local_globals[node_type])
        s = np.concatenate(local_seed[node_type])
        return g[locals_], s[locals_]

    def register(node_type, globals_, seed_idx):
        locals_ = registry.append(node_type, globals_, seed_idx)
        local_globals.setdefault(node_type, []).append(np.asarray(globals_, dtype=np.int64))
        local_seed.setdefault(node_type, []).append(np.asarray(seed_idx, dtype=np.int64))
        return locals_

    layer_samples: list[LayerSample] = [None] * layers
    for layer in range(layers, 0, -1):
        sample = LayerSample(dst_locals={t: idx for t, idx in frontier.items()})
        new_frontier: dict[str, list[np.ndarray]] = {}
        for route in routes:
            dst_t = route.dst_type
            if dst_t not in frontier or len(frontier[dst_t]) == 0:
                continue
            cap = fanout.get(route.route_id, layer)
            d_locals = frontier[dst_t]
            d_globals, d_seed = lookup(dst_t, d_locals)
            d_times = seeds.seed_times[d_seed]
            if route.is_composite:
                radj = graph.reverse[(route.fk_table, route.fk_dst_column)]
                owner, mids = _expand_csr(radj.indptr, radj.indices, d_globals)
                ok = _temporal_ok(graph, route.mid_type, mids, d_times[owner])
                owner, mids = owner[ok], mids[ok]
                sel = _sample_per_group(owner, cap, rng)
                owner, mids = owner[sel], mids[sel]
                srcs = graph.forward[(route.fk_table, route.fk_src_column)][mids]
                ok = srcs != NULL_INDEX
                src_ts = graph.timestamps(route.src_type)
                if src_ts is not None:
                    ok &= src_ts[np.where(ok, srcs, 0)] <= d_times[owner]
                owner, mids, srcs = owner[ok], mids[ok], srcs[ok]
                if len(owner) == 0:
                    continue
                mid_seed = d_seed[owner]
                mid_locals = register(route.mid_type, mids, mid_seed)
                src_locals = register(route.src_type, srcs, mid_seed)
                sample.blocks.append(RouteBlock(route.route_id, owner,
                                                src_locals, mid_locals))
                new_frontier.setdefault(route.src_type, []).append(src_locals)
            else:
                if route.forward:
                    # FK owner rows reference the destination: reverse lookup.
                    radj = graph.reverse[(route.fk_table, route.fk_column)]
                    owner, srcs = _expand_csr(radj.indptr, radj.indices, d_globals)
                else:
                    fwd = graph.forward[(route.fk_table, route.fk_column)]
                    srcs = fwd[d_globals]
                    owner = np.arange(len(d_globals), dtype=np.int64)
                    keep = srcs != NULL_INDEX
                    owner, srcs = owner[keep], srcs[keep]
                ok = _temporal_ok(graph, route.src_type, srcs, d_times[owner])
                owner, srcs = owner[ok], srcs[ok]
                sel = _sample_per_group(owner, cap, rng)
                owner, srcs = owner[sel], srcs[sel]
                if len(owner) == 0:
                    continue
                src_locals = register(route.src_type, srcs, d_seed[owner])
                sample.blocks.append(RouteBlock(route.route_id, owner, src_locals))
                new_frontier.setdefault(route.src_type, []).append(src_locals)
        layer_samples[layer - 1] = sample
        if expand_destinations:
            for t, idx in sample.dst_locals.items():
                new_frontier.setdefault(t, []).insert(0, idx)
        frontier = {t: np.concatenate(parts) for t, parts in new_frontier.items()}
    return SampledSubgraph(seeds.node_type, len(seeds), registry.finalize(),
                           layer_samples)


def make_batches(node_type, node_ids, seed_times, labels=None, batch_size=512,
                 shuffle=False, rng=None) -> list[SeedBatch]:
    """Partition task rows into seed batches, optionally shuffled.

    With ``shuffle`` off the original row order is preserved.  The same
    generator state always produces the same batch sequence.
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    seed_times = np.asarray(seed_times, dtype=np.int64)
    n = len(node_ids)
    if n == 0:
        raise ValueError("cannot batch an empty task table")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(n, dtype=np.int64)
    if shuffle:
        if isinstance(rng, (int, np.integer)) or rng is None:
            rng = np.random.default_rng(rng)
        order = rng.permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        batches.append(SeedBatch(
            node_type=node_type,
            node_ids=node_ids[idx],
            seed_times=seed_times[idx],
            labels=None if labels is None else np.asarray(labels)[idx],
            row_indices=idx,
        ))
    return batches


def leakage_violations(graph: EntityGraph, sub: SampledSubgraph,
                       seed_times) -> int:
    """Count sampled node instances whose timestamp exceeds their seed time."""
    seed_times = np.asarray(seed_times, dtype=np.int64)
    bad = 0
    for node_type, tn in sub.nodes.items():
        ts = graph.timestamps(node_type)
        if ts is None or len(tn) == 0:
            continue
        bad += int(np.sum(ts[tn.globals_] > seed_times[tn.seed_idx]))
    return bad
