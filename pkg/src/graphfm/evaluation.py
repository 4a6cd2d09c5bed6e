"""Downstream tasks on frozen embeddings: node classification, link prediction, clustering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import MLP
from .graph import SplitSpec
from .metrics import auc, average_precision, ari, kmeans, nmi


@dataclass
class ProbeConfig:
    hidden: Sequence[int] = (256,)
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 5e-4
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("probe epochs must be >= 1")


@dataclass
class LinkDecoderConfig:
    decode_channels_lp: int = 256
    decode_layers_lp: int = 2
    epochs: int = 100
    lr: float = 0.01
    eval_every: int = 10
    batch_size: int = 4096
    seed: int = 0


@dataclass
class MetricsRecord:
    accuracy: Optional[float] = None
    auc: Optional[float] = None
    ap: Optional[float] = None
    nmi: Optional[float] = None
    ari: Optional[float] = None

    def as_dict(self) -> dict:
        return {"acc": self.accuracy, "auc": self.auc, "ap": self.ap, "nmi": self.nmi, "ari": self.ari}


def cross_entropy(logits: Tensor, labels: np.ndarray, num_classes: int) -> Tensor:
    onehot = np.eye(num_classes, dtype=logits.value.dtype)[labels]
    picked = ag.sum(logits * onehot, axis=1)
    return ag.mean(ag.logsumexp_rows(logits) - picked)


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else float("nan")


def eval_node_classification(h: np.ndarray, labels: np.ndarray, splits: SplitSpec,
                             probe: ProbeConfig = ProbeConfig()) -> dict:
    """Train an MLP probe on frozen embeddings; test accuracy at the best validation epoch."""
    labels = np.asarray(labels)
    tr, va, te = splits.train_mask, splits.val_mask, splits.test_mask
    num_classes = int(labels.max()) + 1
    missing = set(range(num_classes)) - set(np.unique(labels[tr]).tolist())
    if missing:
        raise ValueError(f"classes {sorted(missing)} absent from the training split")
    rng = np.random.default_rng(probe.seed)
    x = np.array(h, dtype=ag.default_dtype())
    head = MLP((x.shape[1],) + tuple(probe.hidden) + (num_classes,), rng, "probe", "relu")
    opt = ag.Adam(head.parameters(), lr=probe.lr, weight_decay=probe.weight_decay)
    x_tr, y_tr = Tensor(x[tr]), labels[tr]
    best_val, best_test, best_epoch, since = -1.0, float("nan"), 0, 0
    for epoch in range(1, probe.epochs + 1):
        ag.get_tape().clear()
        loss = cross_entropy(head(x_tr, True, 0.5, rng), y_tr, num_classes)
        opt.zero_grad()
        ag.backward(loss)
        opt.step()
        with ag.no_grad():
            logits = head(Tensor(x)).value
        val = _accuracy(logits[va], labels[va])
        if val > best_val:
            best_val, best_test, best_epoch, since = val, _accuracy(logits[te], labels[te]), epoch, 0
        else:
            since += 1
            if since >= probe.patience:
                break
    return {"val_acc": best_val, "test_acc": best_test, "best_epoch": best_epoch}


def _pair_features(h: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return h[pairs[:, 0]] * h[pairs[:, 1]]


def eval_link_prediction(h: np.ndarray, splits: SplitSpec, dec: LinkDecoderConfig = LinkDecoderConfig()) -> dict:
    """MLP decoder on Hadamard pair features; test AUC/AP at the best validation AUC."""
    if splits is None or len(splits.lp_test_pos) == 0 or len(splits.lp_train_edges) == 0:
        raise ValueError("link-prediction splits are missing")
    rng = np.random.default_rng(dec.seed)
    x = np.array(h, dtype=ag.default_dtype())
    n = x.shape[0]
    dims = (x.shape[1],) + (dec.decode_channels_lp,) * (dec.decode_layers_lp - 1) + (1,)
    head = MLP(dims, rng, "lp", "relu")
    opt = ag.Adam(head.parameters(), lr=dec.lr)
    pos = splits.lp_train_edges
    has_val = len(splits.lp_val_pos) > 0

    def scores(p, q):
        with ag.no_grad():
            sp = head(Tensor(_pair_features(x, p))).value.ravel()
            sn = head(Tensor(_pair_features(x, q))).value.ravel()
        s = np.concatenate([sp, sn])
        y = np.concatenate([np.ones(len(sp)), np.zeros(len(sn))])
        return auc(s, y), average_precision(s, y)

    best = None
    for epoch in range(1, dec.epochs + 1):
        batch = pos if len(pos) <= dec.batch_size else pos[rng.choice(len(pos), dec.batch_size, replace=False)]
        neg = rng.integers(0, n, size=(len(batch), 2))
        feats = np.concatenate([_pair_features(x, batch), _pair_features(x, neg)])
        target = np.concatenate([np.ones(len(batch)), np.zeros(len(neg))])[:, None]
        ag.get_tape().clear()
        loss = ag.bce_with_logits(head(Tensor(feats)), target)
        opt.zero_grad()
        ag.backward(loss)
        opt.step()
        if epoch % dec.eval_every == 0 or epoch == dec.epochs:
            val = scores(splits.lp_val_pos, splits.lp_val_neg) if has_val else (0.0, 0.0)
            if best is None or val[0] > best[0][0]:
                best = (val, scores(splits.lp_test_pos, splits.lp_test_neg), epoch)
    if best is None:
        val = scores(splits.lp_val_pos, splits.lp_val_neg) if has_val else (float("nan"),) * 2
        best = (val, scores(splits.lp_test_pos, splits.lp_test_neg), 0)
    (va, vp), (ta, tp), ep = best
    return {"val_auc": va, "val_ap": vp, "test_auc": ta, "test_ap": tp, "best_epoch": ep}


def eval_node_clustering(h: np.ndarray, labels: np.ndarray, k: Optional[int] = None, restarts: int = 10,
                         seed: int = 0, mask: Optional[np.ndarray] = None) -> dict:
    """k-means with k = number of classes, scored by NMI and ARI against the labels."""
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else k
    res = kmeans(h, k, restarts=restarts, seed=seed)
    pred = res.labels
    if mask is not None:
        pred, labels = pred[mask], labels[mask]
    return {"nmi": nmi(labels, pred), "ari": ari(labels, pred)}
