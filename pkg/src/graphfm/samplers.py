"""Batch plans for full-batch, neighbor-sampled and cluster-subgraph training."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .graph import NormalizedAdjacency, SparseGraph, normalize_adjacency, build_csr


@dataclass(frozen=True)
class BatchPlan:
    """Per-layer node sets ``B_0 .. B_K`` and the K blocks between them.

    ``blocks[l]`` has shape ``(|B_l|, |B_{l+1}|)`` and maps layer-(l+1)
    inputs onto layer-l outputs. Each ``B_l`` is a prefix of ``B_{l+1}``,
    so output node i of a block is also input node i.
    """

    layer_nodes: List[np.ndarray]
    blocks: List[sp.csr_matrix]
    strategy: str

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    @property
    def output_nodes(self) -> np.ndarray:
        return self.layer_nodes[0]

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layer_nodes[-1]


@dataclass
class SamplerConfig:
    strategy: str = "full"
    batch_size: int = 512
    fanouts: Sequence[int] = (10, 10)
    num_clusters: int = 16
    clusters_per_batch: int = 2
    renormalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("full", "node", "subgraph"):
            raise ValueError(f"unknown strategy {self.strategy!r}; expected full, node or subgraph")
        if not 1 <= self.clusters_per_batch <= self.num_clusters:
            raise ValueError("need num_clusters >= clusters_per_batch >= 1")
        if any(q < 1 for q in self.fanouts):
            raise ValueError("fanouts must be >= 1")


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    num_clusters: int

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)

    def edge_cut(self, g: SparseGraph) -> int:
        e = g.edge_array()
        return int(np.sum(self.assignment[e[:, 0]] != self.assignment[e[:, 1]]))


def full_batch_plan(g: SparseGraph, adj: NormalizedAdjacency, num_layers: int) -> BatchPlan:
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    nodes = np.arange(g.num_nodes)
    return BatchPlan([nodes] * (num_layers + 1), [adj.matrix] * num_layers, "full")


def _sample_neighbors(g: SparseGraph, frontier: np.ndarray, fanout: int, rng):
    """CSR entry positions of up to ``fanout`` uniform neighbors per frontier node."""
    starts = g.row_offsets[frontier]
    counts = g.row_offsets[frontier + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    seg = np.repeat(np.arange(len(frontier)), counts)
    seg_start = np.repeat(np.cumsum(counts) - counts, counts)
    entry = np.repeat(starts, counts) + (np.arange(total) - seg_start)
    keys = rng.random(total)
    order = np.lexsort((keys, seg))
    rank = np.arange(total) - seg_start
    picked = order[rank < fanout]
    # restore CSR order within each row
    picked = np.sort(picked)
    return seg[picked], entry[picked]


def _hat_position(g: SparseGraph, adj: NormalizedAdjacency, rows: np.ndarray, entries: np.ndarray):
    """Position in the normalized CSR of the neighbor entry ``entries`` of row ``rows``."""
    cols = g.col_indices[entries]
    return adj.indptr[rows] + (entries - g.row_offsets[rows]) + (cols > rows)


def node_sampling_plan(g: SparseGraph, adj: NormalizedAdjacency, seeds, fanouts: Sequence[int],
                       seed: int = 0) -> BatchPlan:
    """Uniform neighbor sampling; each layer also keeps the nodes of the layer below."""
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise ValueError("seed set is empty")
    if seeds.min() < 0 or seeds.max() >= g.num_nodes:
        raise ValueError("seed node out of range")
    if any(q < 1 for q in fanouts):
        raise ValueError("fanouts must be >= 1")
    rng = np.random.default_rng(seed)
    layers = [seeds]
    blocks = []
    pos = np.full(g.num_nodes, -1, dtype=np.int64)
    diag = adj.matrix.diagonal()
    for q in fanouts:
        cur = layers[-1]
        local_row, entry = _sample_neighbors(g, cur, int(q), rng)
        nbrs = g.col_indices[entry]
        new = np.setdiff1d(nbrs, cur)
        nxt = np.concatenate([cur, new])
        pos[nxt] = np.arange(len(nxt))
        n_out = len(cur)
        r = np.concatenate([np.arange(n_out), local_row])
        c = np.concatenate([np.arange(n_out), pos[nbrs]])
        vals = np.concatenate([diag[cur], adj.values[_hat_position(g, adj, cur[local_row], entry)]])
        block = sp.csr_matrix((vals, (r, c)), shape=(n_out, len(nxt)))
        block.sort_indices()
        blocks.append(block)
        pos[nxt] = -1
        layers.append(nxt)
    return BatchPlan(layers, blocks, "node")


def partition_graph(g: SparseGraph, num_clusters: int, seed: int = 0) -> Partition:
    """Balanced BFS-growth partition with one boundary-refinement pass."""
    n = g.num_nodes
    if num_clusters < 1 or num_clusters > n:
        raise ValueError(f"num_clusters must be in [1, {n}], got {num_clusters}")
    rng = np.random.default_rng(seed)
    k = num_clusters
    quota = np.full(k, n // k)
    quota[: n % k] += 1
    a = g.to_scipy()

    # spread seeds: each next seed is among the nodes farthest from those chosen
    seeds = [int(rng.integers(n))]
    for _ in range(1, k):
        dist = dijkstra(a, unweighted=True, indices=seeds, min_only=True)
        dist[seeds] = -1
        far = np.flatnonzero(dist == dist.max())
        seeds.append(int(rng.choice(far)))

    assign = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    queues = [[s] for s in seeds]
    heads = [0] * k
    for c, s in enumerate(seeds):
        assign[s] = c
        sizes[c] = 1
    remaining = n - k
    while remaining > 0:
        progressed = False
        for c in range(k):
            if sizes[c] >= quota[c]:
                continue
            while heads[c] < len(queues[c]) and sizes[c] < quota[c]:
                v = queues[c][heads[c]]
                grabbed = False
                for u in g.neighbors(v):
                    if assign[u] == -1:
                        assign[u] = c
                        sizes[c] += 1
                        remaining -= 1
                        queues[c].append(int(u))
                        grabbed = progressed = True
                        break
                if not grabbed:
                    heads[c] += 1
                else:
                    break
        if not progressed and remaining > 0:
            # every frontier is exhausted: restart the emptiest open cluster elsewhere
            open_c = np.flatnonzero(sizes < quota)
            c = int(open_c[np.argmin(sizes[open_c] - quota[open_c])])
            free = np.flatnonzero(assign == -1)
            v = int(rng.choice(free))
            assign[v] = c
            sizes[c] += 1
            remaining -= 1
            queues[c].append(v)

    # stay within +-25% of n / k unless the quotas themselves cannot
    lo = min(max(1, int(np.ceil(0.75 * n / k))), int(quota.min()))
    hi = max(int(np.floor(1.25 * n / k)), int(quota.max()))
    for v in rng.permutation(n):
        nb = g.neighbors(v)
        if len(nb) == 0:
            continue
        cur = assign[v]
        counts = np.bincount(assign[nb], minlength=k)
        best = int(np.argmax(counts))
        if best != cur and counts[best] > counts[cur] and sizes[cur] - 1 >= lo and sizes[best] + 1 <= hi:
            assign[v] = best
            sizes[cur] -= 1
            sizes[best] += 1
    return Partition(assign, k)


def subgraph_batch(g: SparseGraph, adj: NormalizedAdjacency, partition: Partition, cluster_ids,
                   num_layers: int, renormalize: bool = False) -> BatchPlan:
    """All layers share the subgraph induced by the chosen clusters."""
    ids = np.asarray(cluster_ids, dtype=np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= partition.num_clusters):
        raise ValueError("cluster id out of range")
    nodes = np.flatnonzero(np.isin(partition.assignment, ids))
    if len(nodes) == 0:
        raise ValueError("selected clusters are empty")
    if renormalize:
        sub = adj.matrix[nodes][:, nodes]
        rows, cols = sub.nonzero()
        keep = rows < cols
        block = normalize_adjacency(build_csr(np.stack([rows[keep], cols[keep]], 1), len(nodes))).matrix
    else:
        block = adj.matrix[nodes][:, nodes].tocsr()
        block.sort_indices()
    return BatchPlan([nodes] * (num_layers + 1), [block] * num_layers, "subgraph")


def iterate_plans(cfg: SamplerConfig, g: SparseGraph, adj: NormalizedAdjacency, num_layers: int,
                  epoch_seed: int, partition: Optional[Partition] = None,
                  nodes: Optional[np.ndarray] = None) -> Iterator[BatchPlan]:
    """Plans covering one epoch under ``cfg.strategy``."""
    rng = np.random.default_rng(epoch_seed)
    if cfg.strategy == "full":
        yield full_batch_plan(g, adj, num_layers)
    elif cfg.strategy == "node":
        pool = np.arange(g.num_nodes) if nodes is None else np.asarray(nodes)
        perm = rng.permutation(pool)
        for i, start in enumerate(range(0, len(perm), cfg.batch_size)):
            seeds = np.sort(perm[start:start + cfg.batch_size])
            fan = list(cfg.fanouts)[:num_layers]
            fan += [fan[-1]] * (num_layers - len(fan))
            yield node_sampling_plan(g, adj, seeds, fan, seed=int(rng.integers(2 ** 31)))
    else:
        if partition is None:
            raise ValueError("subgraph strategy needs a partition")
        order = rng.permutation(partition.num_clusters)
        for start in range(0, len(order), cfg.clusters_per_batch):
            yield subgraph_batch(g, adj, partition, order[start:start + cfg.clusters_per_batch],
                                 num_layers, cfg.renormalize)
