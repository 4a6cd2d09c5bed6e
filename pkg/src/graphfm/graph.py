"""Sparse graph containers, GCN normalization, splits and synthetic SBM graphs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError


@dataclass(frozen=True)
class SparseGraph:
    """Undirected simple graph stored as a symmetric CSR adjacency.

    Every undirected edge appears twice in ``col_indices``; ``num_edges``
    counts it once.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    num_edges: int

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v]:self.row_offsets[v + 1]]

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``u < v``, lexicographically sorted."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = rows < self.col_indices
        return np.stack([rows[keep], self.col_indices[keep]], axis=1)

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(len(self.col_indices))
        return sp.csr_matrix((data, self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))


@dataclass(frozen=True)
class NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 held as a scipy CSR matrix."""

    matrix: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data


@dataclass(frozen=True)
class SplitSpec:
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    lp_train_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    lp_val_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    lp_val_neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    lp_test_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    lp_test_neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def has_lp(self) -> bool:
        return len(self.lp_test_pos) > 0


@dataclass(frozen=True)
class DatasetBundle:
    name: str
    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    splits: Optional[SplitSpec] = None

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def fingerprint(self) -> dict:
        return {
            "name": self.name,
            "num_nodes": self.graph.num_nodes,
            "num_edges": self.graph.num_edges,
            "feat_dim": self.feat_dim,
            "num_classes": self.num_classes,
        }


def build_csr(edges, num_nodes: int) -> SparseGraph:
    """Symmetric, deduplicated, self-loop-free CSR from an edge list."""
    if num_nodes < 0:
        raise ValueError(f"num_nodes must be non-negative, got {num_nodes}")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and (e.min() < 0 or e.max() >= num_nodes):
        bad = int(np.flatnonzero((e < 0).any(1) | (e >= num_nodes).any(1))[0])
        raise DataError(f"edge {bad} ({e[bad, 0]}, {e[bad, 1]}) out of range for {num_nodes} nodes")
    e = e[e[:, 0] != e[:, 1]]
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    # unique undirected pairs via a single integer key
    keys = np.unique(lo * max(num_nodes, 1) + hi)
    lo, hi = keys // max(num_nodes, 1), keys % max(num_nodes, 1)
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
    return SparseGraph(num_nodes, offsets, cols.astype(np.int64), len(keys))


def validate_csr(g: SparseGraph) -> None:
    """Raise DataError when any CSR invariant is violated."""
    n = g.num_nodes
    if len(g.row_offsets) != n + 1 or g.row_offsets[0] != 0:
        raise DataError("row_offsets has wrong length or does not start at 0")
    if np.any(np.diff(g.row_offsets) < 0) or g.row_offsets[-1] != len(g.col_indices):
        raise DataError("row_offsets not monotone or does not cover col_indices")
    if len(g.col_indices) and (g.col_indices.min() < 0 or g.col_indices.max() >= n):
        raise DataError("column index out of range")
    rows = np.repeat(np.arange(n), g.degrees())
    if np.any(rows == g.col_indices):
        raise DataError("self-loop stored")
    for v in range(n):
        nb = g.neighbors(v)
        if np.any(np.diff(nb) <= 0):
            raise DataError(f"row {v} unsorted or has duplicates")
    fwd = set(zip(rows.tolist(), g.col_indices.tolist()))
    if any((c, r) not in fwd for r, c in fwd):
        raise DataError("adjacency is not symmetric")
    if 2 * g.num_edges != len(g.col_indices):
        raise DataError("num_edges inconsistent with stored entries")


def normalize_adjacency(g: SparseGraph) -> NormalizedAdjacency:
    """Symmetric GCN normalization with self-loops."""
    a = g.to_scipy() + sp.identity(g.num_nodes, format="csr")
    a = sp.csr_matrix(a)
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(g.num_nodes), np.diff(a.indptr))
    a.data = inv[rows] * inv[a.indices]
    return NormalizedAdjacency(a)


def spmm(adj, x: np.ndarray) -> np.ndarray:
    m = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
    if m.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: adjacency {m.shape} vs dense {x.shape}")
    return np.asarray(m @ x)


def subgraph(g: SparseGraph, edges: np.ndarray) -> SparseGraph:
    """Graph on the same node set keeping only ``edges``."""
    return build_csr(edges, g.num_nodes)


def split_nodes(num_nodes: int, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0):
    """Random disjoint train/val/test masks with sizes floor(ratio * N)."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or sum(ratios) > 1 + 1e-12:
        raise ValueError(f"invalid split ratios {ratios}: need three positive values summing to <= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_nodes)
    sizes = [int(np.floor(r * num_nodes + 1e-9)) for r in ratios]
    masks = []
    start = 0
    for s in sizes:
        m = np.zeros(num_nodes, dtype=bool)
        m[perm[start:start + s]] = True
        masks.append(m)
        start += s
    return tuple(masks)


def _sample_negatives(n, count, forbidden: set, rng) -> np.ndarray:
    out = []
    tries = 0
    limit = 100 * max(count, 1)
    while len(out) < count:
        if tries >= limit:
            raise DataError(f"could not sample {count} negative edges after {limit} draws; graph too dense")
        tries += 1
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in forbidden:
            continue
        forbidden.add(key)
        out.append(key)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_edges_lp(g: SparseGraph, val_frac: float = 0.05, test_frac: float = 0.10, seed: int = 0) -> dict:
    """Hold out positive edges for link prediction and draw matching negatives."""
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ValueError("val_frac + test_frac must be in [0, 1)")
    rng = np.random.default_rng(seed)
    edges = g.edge_array()
    m = len(edges)
    n_val, n_test = int(np.floor(val_frac * m + 1e-9)), int(np.floor(test_frac * m + 1e-9))
    perm = rng.permutation(m)
    val_pos = edges[np.sort(perm[:n_val])]
    test_pos = edges[np.sort(perm[n_val:n_val + n_test])]
    train = edges[np.sort(perm[n_val + n_test:])]
    forbidden = set(map(tuple, edges.tolist()))
    n_non_edges = g.num_nodes * (g.num_nodes - 1) // 2 - m
    if n_val + n_test > n_non_edges:
        raise DataError(f"graph too dense: need {n_val + n_test} negatives, only {n_non_edges} non-edges")
    val_neg = _sample_negatives(g.num_nodes, n_val, forbidden, rng)
    test_neg = _sample_negatives(g.num_nodes, n_test, forbidden, rng)
    return dict(lp_train_edges=train, lp_val_pos=val_pos, lp_val_neg=val_neg,
                lp_test_pos=test_pos, lp_test_neg=test_neg)


def make_splits(g: SparseGraph, node_ratios=(0.6, 0.2, 0.2), val_frac=0.05, test_frac=0.10,
                seed: int = 0, public: Optional[dict] = None) -> SplitSpec:
    if public is not None:
        masks = []
        for key in ("train", "val", "test"):
            m = np.zeros(g.num_nodes, dtype=bool)
            m[np.asarray(public[key], dtype=np.int64)] = True
            masks.append(m)
    else:
        masks = split_nodes(g.num_nodes, node_ratios, seed)
    return SplitSpec(*masks, **split_edges_lp(g, val_frac, test_frac, seed))


def sbm_generate(blocks: int, nodes_per_block: int, p_in: float, p_out: float, feat_dim: int,
                 feat_noise: float, seed: int = 0, name: str = "sbm",
                 node_ratios=(0.6, 0.2, 0.2), val_frac=0.05, test_frac=0.10) -> DatasetBundle:
    """Stochastic block model graph with noisy one-hot block-centroid features."""
    if not (0 <= p_out <= p_in <= 1):
        raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if blocks < 2 or nodes_per_block < 1:
        raise ValueError("need at least 2 blocks and 1 node per block")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    pieces = []
    # per block pair: binomial edge count, then that many distinct pair indices
    for a in range(blocks):
        for b in range(a, blocks):
            p = p_in if a == b else p_out
            if p <= 0:
                continue
            if a == b:
                total = nodes_per_block * (nodes_per_block - 1) // 2
            else:
                total = nodes_per_block * nodes_per_block
            k = rng.binomial(total, p)
            idx = np.sort(rng.choice(total, size=k, replace=False))
            if a == b:
                # decode linear index into strict upper triangle of the block
                i = (nodes_per_block - 2 - np.floor(
                    np.sqrt(-8 * idx + 4 * nodes_per_block * (nodes_per_block - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
                j = idx + i + 1 - nodes_per_block * (nodes_per_block - 1) // 2 + \
                    (nodes_per_block - i) * ((nodes_per_block - i) - 1) // 2
                u, v = i, j
            else:
                u, v = idx // nodes_per_block, idx % nodes_per_block
            pieces.append(np.stack([u + a * nodes_per_block, v + b * nodes_per_block], axis=1))
    edges = np.concatenate(pieces) if pieces else np.zeros((0, 2), dtype=np.int64)
    g = build_csr(edges, n)
    if feat_dim < blocks:
        raise ValueError("feat_dim must be at least the number of blocks")
    centroids = np.zeros((blocks, feat_dim))
    centroids[np.arange(blocks), np.arange(blocks)] = 1.0
    features = (centroids[labels] + feat_noise * rng.standard_normal((n, feat_dim))).astype(np.float32)
    splits = make_splits(g, node_ratios, val_frac, test_frac, seed)
    return DatasetBundle(name, g, features, labels, splits)
