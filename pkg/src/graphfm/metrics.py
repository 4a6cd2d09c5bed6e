"""Ranking and clustering metrics plus a seeded k-means."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
from scipy.stats import rankdata


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    return s, y


def auc(scores, labels) -> float:
    """ROC AUC as P(score+ > score-) + P(tie) / 2, via average ranks."""
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over distinct descending thresholds of (R_n - R_{n-1}) * P_n."""
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AP needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tied group
    ends = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


ap = average_precision


def _contingency(u, v):
    u, v = np.asarray(u).ravel(), np.asarray(v).ravel()
    if len(u) != len(v):
        raise ValueError(f"clusterings differ in length: {len(u)} vs {len(v)}")
    if len(u) == 0:
        raise ValueError("empty clustering")
    _, ui = np.unique(u, return_inverse=True)
    _, vi = np.unique(v, return_inverse=True)
    table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table


def nmi(u, v) -> float:
    """I(U;V) / sqrt(H(U) H(V)) with natural logarithms."""
    table = _contingency(u, v)
    n = table.sum()
    p = table / n
    # marginals from integer counts so a single cluster has probability exactly 1
    pu, pv = table.sum(axis=1) / n, table.sum(axis=0) / n
    hu = -np.sum(pu * np.log(pu))
    hv = -np.sum(pv * np.log(pv))
    if hu == 0.0 and hv == 0.0:
        return 1.0
    if hu == 0.0 or hv == 0.0:
        return 0.0
    nz = p > 0
    mi = np.sum(p[nz] * np.log(p[nz] / np.outer(pu, pv)[nz]))
    return float(min(max(mi / np.sqrt(hu * hv), 0.0), 1.0))


def ari(u, v) -> float:
    """Adjusted Rand index evaluated exactly in rational arithmetic."""
    table = _contingency(u, v)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two elements")
    index = sum(comb(int(x), 2) for x in table.ravel())
    sum_a = sum(comb(int(x), 2) for x in table.sum(axis=1))
    sum_b = sum(comb(int(x), 2) for x in table.sum(axis=0))
    expected = Fraction(sum_a * sum_b, comb(n, 2))
    max_index = Fraction(sum_a + sum_b, 2)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int


def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sq_dists(x, c):
    return np.maximum((x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :], 0.0)


def kmeans(x, k: int, restarts: int = 10, max_iter: int = 300, tol: float = 1e-6, seed: int = 0) -> KMeansResult:
    """k-means++ seeding, Lloyd iterations, best inertia over restarts."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        c = _kmeans_pp(x, k, rng)
        it = 0
        for it in range(1, max_iter + 1):
            lab = np.argmin(_sq_dists(x, c), axis=1)
            new = c.copy()
            for j in range(k):
                members = x[lab == j]
                if len(members):
                    new[j] = members.mean(axis=0)
                else:
                    # reseed an empty cluster at the worst-fit point
                    d = _sq_dists(x, c)[np.arange(n), lab]
                    new[j] = x[int(np.argmax(d))]
            shift = np.sqrt(((new - c) ** 2).sum(axis=1)).max()
            c = new
            if shift < tol:
                break
        lab = np.argmin(_sq_dists(x, c), axis=1)
        inertia = float(((x - c[lab]) ** 2).sum())
        if best is None or inertia < best.inertia:
            best = KMeansResult(lab, c, inertia, it)
    return best
