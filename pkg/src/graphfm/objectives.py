"""Augmentations, masking and the six self-supervised losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .graph import SparseGraph, build_csr


@dataclass(frozen=True)
class AugmentationSpec:
    drop_edge_p: float = 0.0
    drop_feat_p: float = 0.0

    def __post_init__(self):
        for name in ("drop_edge_p", "drop_feat_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def drop_edges(g: SparseGraph, p: float, rng: np.random.Generator,
               weights: Optional[np.ndarray] = None) -> SparseGraph:
    """Keep each undirected edge independently with probability 1 - p (or 1 - weights[e])."""
    if p == 0.0 and weights is None:
        return g
    edges = g.edge_array()
    probs = np.full(len(edges), p) if weights is None else weights
    keep = rng.random(len(edges)) >= probs
    return build_csr(edges[keep], g.num_nodes)


def mask_feature_columns(x: np.ndarray, p: float, rng: np.random.Generator,
                         weights: Optional[np.ndarray] = None) -> np.ndarray:
    if p == 0.0 and weights is None:
        return x
    probs = np.full(x.shape[1], p) if weights is None else weights
    keep = rng.random(x.shape[1]) >= probs
    return x * keep[None, :].astype(x.dtype)


def augment(g: SparseGraph, x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator):
    return drop_edges(g, spec.drop_edge_p, rng), mask_feature_columns(x, spec.drop_feat_p, rng)


def degree_drop_weights(g: SparseGraph, p: float, threshold: float = 0.7) -> np.ndarray:
    """Per-edge drop probabilities that spare edges touching high-degree nodes."""
    edges = g.edge_array()
    deg = g.degrees().astype(float)
    s = np.log(np.maximum(deg[edges[:, 1]], 1.0))
    if len(s) == 0 or s.max() == s.mean():
        return np.full(len(s), p)
    w = (s.max() - s) / (s.max() - s.mean())
    return np.minimum(w * p, threshold)


def degree_feature_weights(g: SparseGraph, x: np.ndarray, p: float, threshold: float = 0.7) -> np.ndarray:
    """Per-column drop probabilities; columns prominent on central nodes are kept more often."""
    cent = np.log(np.maximum(g.degrees().astype(float), 1.0))
    s = np.log(np.abs(x).T @ cent + 1e-12)
    if s.max() == s.mean():
        return np.full(x.shape[1], p)
    w = (s.max() - s) / (s.max() - s.mean())
    return np.minimum(w * p, threshold)


# -- contrastive losses ---------------------------------------------------------

def _eye(n: int) -> np.ndarray:
    return np.eye(n, dtype=ag.default_dtype())


def gbt_loss(z1, z2, eps: float = 1e-8) -> Tensor:
    """Barlow-twins loss on the cross-correlation of standardized embeddings."""
    z1, z2 = ag._as_tensor(z1), ag._as_tensor(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    n, d = z1.shape
    if n < 2:
        raise ValueError("need at least two nodes")
    c = (ag.column_standardize(z1, eps).T @ ag.column_standardize(z2, eps)) * (1.0 / n)
    eye = _eye(d)
    on = ag.sum((c * eye - eye) ** 2)
    off = ag.sum((c * (1.0 - eye)) ** 2)
    return on + off * (1.0 / d)


def cca_ssg_loss(z1, z2, lam: float = 1e-3, eps: float = 1e-8) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    z1, z2 = ag._as_tensor(z1), ag._as_tensor(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    n, d = z1.shape
    scale = 1.0 / np.sqrt(n)
    a = ag.column_standardize(z1, eps) * scale
    b = ag.column_standardize(z2, eps) * scale
    invariance = ag.sum((a - b) ** 2)
    eye = _eye(d)
    dec = ag.sum((a.T @ a - eye) ** 2) + ag.sum((b.T @ b - eye) ** 2)
    return invariance + dec * lam


def cosine_rows(a, b, eps: float = 1e-12) -> Tensor:
    return ag.sum(ag.row_l2_normalize(a, eps) * ag.row_l2_normalize(b, eps), axis=1)


def bgrl_loss(pred1, target2, pred2, target1) -> Tensor:
    """Symmetric bootstrap loss; targets must be constants (no gradient)."""
    l12 = ag.mean(2.0 - 2.0 * cosine_rows(pred1, target2))
    l21 = ag.mean(2.0 - 2.0 * cosine_rows(pred2, target1))
    return l12 + l21


def _infonce_side(h1: Tensor, h2: Tensor, tau: float) -> Tensor:
    n = h1.shape[0]
    between = (h1 @ h2.T) * (1.0 / tau)
    refl = (h1 @ h1.T) * (1.0 / tau) + (-1e9) * _eye(n)
    lse = ag.logsumexp_rows(ag.concat_cols([between, refl]))
    pos = ag.sum(h1 * h2, axis=1) * (1.0 / tau)
    return lse - pos


def gca_infonce_loss(u, v, tau: float = 0.5) -> Tensor:
    """Symmetric InfoNCE with inter- and intra-view negatives on unit-norm rows."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    u, v = ag._as_tensor(u), ag._as_tensor(v)
    if u.shape != v.shape:
        raise ValueError(f"view shapes differ: {u.shape} vs {v.shape}")
    h1, h2 = ag.row_l2_normalize(u), ag.row_l2_normalize(v)
    return ag.mean(_infonce_side(h1, h2, tau) + _infonce_side(h2, h1, tau)) * 0.5


# -- generative pieces ----------------------------------------------------------

def mask_nodes(x, mask_rate: float, rng: np.random.Generator, token: Optional[Tensor] = None):
    """Replace floor(mask_rate * N) random rows by ``token``.

    Returns the masked features (a Tensor when a token is given), the masked
    row indices and the original rows at those indices.
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must be in [0, 1], got {mask_rate}")
    xv = x.value if isinstance(x, Tensor) else np.asarray(x)
    n = xv.shape[0]
    k = int(np.floor(mask_rate * n + 1e-9))
    idx = np.sort(rng.permutation(n)[:k])
    targets = xv[idx]
    if token is None:
        token = Tensor(np.zeros((1, xv.shape[1]), dtype=xv.dtype))
    m = np.zeros((n, 1), dtype=xv.dtype)
    m[idx] = 1.0
    masked = ag.mul(x, 1.0 - m) + ag.mul(token, m)
    return masked, idx, targets


def graphmae_loss(targets, recon, alpha_l: float = 2.0) -> Tensor:
    """Scaled cosine error averaged over the masked nodes."""
    if alpha_l < 1:
        raise ValueError("alpha_l must be >= 1")
    targets, recon = ag._as_tensor(targets), ag._as_tensor(recon)
    if targets.shape[0] == 0:
        raise ValueError("no masked nodes to reconstruct")
    cos = cosine_rows(targets, recon)
    return ag.mean((1.0 - cos) ** alpha_l)


def mask_edges(g: SparseGraph, mask_ratio: float, rng: np.random.Generator) -> Tuple[SparseGraph, np.ndarray]:
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    if g.num_edges == 0:
        raise ValueError("graph has no edges to mask")
    edges = g.edge_array()
    k = int(np.floor(mask_ratio * len(edges) + 1e-9))
    perm = rng.permutation(len(edges))
    masked = edges[np.sort(perm[:k])]
    visible = edges[np.sort(perm[k:])]
    return build_csr(visible, g.num_nodes), masked


def s2gae_loss(pos_logits, neg_logits) -> Tensor:
    """Mean binary cross-entropy over positive and negative edge logits."""
    pos, neg = ag._as_tensor(pos_logits), ag._as_tensor(neg_logits)
    logits = ag.concat_cols([pos.T, neg.T]).T if pos.shape[1] == 1 else ag.concat_cols([pos, neg])
    targets = np.concatenate([np.ones(pos.value.size), np.zeros(neg.value.size)])
    return ag.bce_with_logits(logits, targets.reshape(logits.shape))
