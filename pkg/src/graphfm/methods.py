"""Self-supervised methods behind one training/embedding interface."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import MLP, Encoder, EncoderConfig
from .errors import ConfigError, NumericError
from .graph import NormalizedAdjacency, SparseGraph, normalize_adjacency
from .objectives import (AugmentationSpec, bgrl_loss, cca_ssg_loss, degree_drop_weights,
                         degree_feature_weights, drop_edges, gbt_loss, gca_infonce_loss,
                         graphmae_loss, mask_edges, mask_feature_columns, s2gae_loss)
from .samplers import BatchPlan, Partition, full_batch_plan, node_sampling_plan, subgraph_batch
from .space import METHOD_DEFAULTS, METHODS, POSITIVE_INT_FIELDS, PROBABILITY_FIELDS, table_set


@dataclass
class MethodConfig:
    method: str
    lr: float = 1e-3
    weight_decay: float = 1e-5
    num_layers: int = 2
    activation: Optional[str] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {{{', '.join(METHODS)}}}")
        defaults = METHOD_DEFAULTS[self.method]
        unknown = sorted(set(self.params) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown {self.method} hyper-parameter {unknown[0]!r}")
        self.params = {**defaults, **self.params}
        for key, val in self.params.items():
            if key in PROBABILITY_FIELDS and val is not None and not 0.0 <= float(val) <= 1.0:
                raise ConfigError(f"{key}={val} out of range [0, 1]; search set {table_set(self.method, key)}")
            if key in POSITIVE_INT_FIELDS and int(val) < 1:
                raise ConfigError(f"{key}={val} must be a positive integer; search set {table_set(self.method, key)}")
        if self.params.get("alpha_l", 1) < 1:
            raise ConfigError(f"alpha_l must be >= 1; search set {table_set(self.method, 'alpha_l')}")
        if self.method == "s2gae" and not 0.0 < float(self.params["mask_ratio"]) < 1.0:
            raise ConfigError(f"mask_ratio={self.params['mask_ratio']} out of range (0, 1); "
                              f"search set {table_set('s2gae', 'mask_ratio')}")
        if self.method == "bgrl" and not 0.0 <= float(self.params["ema_decay"]) <= 1.0:
            raise ConfigError("ema_decay must be in [0, 1]")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {"method": self.method, "lr": self.lr, "weight_decay": self.weight_decay,
                "num_layers": self.num_layers, "activation": self.activation, **self.params}


@dataclass
class Batch:
    """One training iteration's input: the graph plus how to carve the batch."""

    graph: SparseGraph
    adj: NormalizedAdjacency
    features: np.ndarray
    strategy: str
    num_layers: int
    seeds: Optional[np.ndarray] = None
    fanouts: Sequence[int] = (10, 10)
    plan_seed: int = 0
    partition: Optional[Partition] = None
    cluster_ids: Optional[np.ndarray] = None
    renormalize: bool = False

    def plan(self, g: Optional[SparseGraph] = None, adj: Optional[NormalizedAdjacency] = None) -> BatchPlan:
        g = self.graph if g is None else g
        adj = self.adj if adj is None else adj
        if self.strategy == "full":
            return full_batch_plan(g, adj, self.num_layers)
        if self.strategy == "node":
            fan = list(self.fanouts)[:self.num_layers]
            fan += [fan[-1]] * (self.num_layers - len(fan))
            return node_sampling_plan(g, adj, self.seeds, fan, seed=self.plan_seed)
        return subgraph_batch(g, adj, self.partition, self.cluster_ids, self.num_layers, self.renormalize)

    def view(self, drop_edge: float, drop_feat: float, rng: np.random.Generator,
             edge_weights=None, feat_weights=None):
        """Augmented plan and the matching restricted feature rows."""
        if drop_edge > 0 or edge_weights is not None:
            g = drop_edges(self.graph, drop_edge, rng, edge_weights)
            plan = self.plan(g, normalize_adjacency(g))
        else:
            plan = self.plan()
        x = mask_feature_columns(self.features, drop_feat, rng, feat_weights)
        return plan, x[plan.input_nodes]


class SSLMethod:
    name = ""

    def __init__(self, cfg: MethodConfig, in_dim: int, seed: int = 0):
        self.cfg = cfg
        self.in_dim = in_dim
        self.steps = 0
        self.last_activation_bytes = 0
        rng = np.random.default_rng(seed)
        self.build(rng)
        self.optimizer = ag.Adam(self.trainable(), lr=self.learning_rate(), weight_decay=cfg.weight_decay)

    # -- to be provided by subclasses ----------------------------------------
    def build(self, rng):
        raise NotImplementedError

    def modules(self) -> List:
        raise NotImplementedError

    def loss(self, batch: Batch, rng: np.random.Generator) -> Optional[Tensor]:
        raise NotImplementedError

    # -- shared machinery ----------------------------------------------------
    def learning_rate(self) -> float:
        return self.cfg.lr

    def encoder_config(self, hidden: int, kind: str = "gcn", default_act: str = "prelu", **kw) -> EncoderConfig:
        act = self.cfg.activation or ("elu" if kind == "gat" else default_act)
        return EncoderConfig(kind=kind, in_dim=self.in_dim, hidden_dims=(hidden,) * self.cfg.num_layers,
                             activation=act, **kw)

    def trainable(self) -> List[Tensor]:
        out = []
        for m in self.modules():
            out.extend(m.parameters() if hasattr(m, "parameters") else [m])
        return out

    def named_parameters(self) -> Dict[str, Tensor]:
        named = {}
        for m in self.modules():
            if isinstance(m, Tensor):
                named[m.name] = m
            else:
                named.update(m.params)
        return named

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = set(named) - set(state)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
        for k, t in named.items():
            if state[k].shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {t.shape}")
            t.value[...] = state[k]

    def after_step(self):
        pass

    def training_step(self, batch: Batch, rng: np.random.Generator) -> Optional[float]:
        tape = ag.get_tape()
        tape.clear()
        loss = self.loss(batch, rng)
        if loss is None:
            tape.clear()
            return None
        value = loss.item()
        if not np.isfinite(value):
            tape.clear()
            raise NumericError(f"non-finite loss {value} at training step {self.steps}")
        self.last_activation_bytes = tape.activation_bytes()
        self.optimizer.zero_grad()
        ag.backward(loss)
        self.optimizer.step()
        self.after_step()
        self.steps += 1
        return value

    def encode(self, adj, x) -> Tensor:
        return self.encoder.forward_full(adj, x)

    def embed(self, adj: NormalizedAdjacency, x: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return np.array(self.encode(adj, x).value)


class GBT(SSLMethod):
    name = "gbt"

    def build(self, rng):
        self.encoder = Encoder(self.encoder_config(int(self.cfg["emb_dim"])), rng, "enc")

    def modules(self):
        return [self.encoder]

    def learning_rate(self):
        return self.cfg["lr_base"] or self.cfg.lr

    def loss(self, batch, rng):
        p_e, p_x = self.cfg["p_e"], self.cfg["p_x"]
        z = []
        for _ in range(2):
            plan, x = batch.view(p_e, p_x, rng)
            z.append(self.encoder.forward_minibatch(plan, x, True, rng))
        return gbt_loss(z[0], z[1])


class CCASSG(SSLMethod):
    name = "cca_ssg"

    def build(self, rng):
        self.encoder = Encoder(self.encoder_config(int(self.cfg["hid_dim"])), rng, "enc")

    def modules(self):
        return [self.encoder]

    def loss(self, batch, rng):
        z = []
        for _ in range(2):
            plan, x = batch.view(self.cfg["der"], self.cfg["dfr"], rng)
            z.append(self.encoder.forward_minibatch(plan, x, True, rng))
        return cca_ssg_loss(z[0], z[1], float(self.cfg["lambd"]))


class BGRL(SSLMethod):
    name = "bgrl"

    def build(self, rng):
        hidden = int(self.cfg["hidden"])
        ecfg = self.encoder_config(hidden)
        self.encoder = Encoder(ecfg, rng, "enc")
        self.predictor = MLP((hidden, int(self.cfg["pred_hidden"]), hidden), rng, "pred", "prelu")
        self.target = Encoder(ecfg, rng, "target")
        for k, t in self.target.params.items():
            t.requires_grad = False
            t.value[...] = self.encoder.params["enc" + k[len("target"):]].value

    def modules(self):
        return [self.encoder, self.predictor]

    def named_parameters(self):
        return {**super().named_parameters(), **self.target.params}

    def ema_update(self, tau: Optional[float] = None):
        tau = float(self.cfg["ema_decay"]) if tau is None else tau
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"EMA decay must be in [0, 1], got {tau}")
        for k, t in self.target.params.items():
            online = self.encoder.params["enc" + k[len("target"):]].value
            t.value[...] = tau * t.value + (1.0 - tau) * online

    def after_step(self):
        self.ema_update()

    def loss(self, batch, rng):
        c = self.cfg
        v1 = batch.view(c["drop_edge_p_1"], c["drop_feat_p_1"], rng)
        v2 = batch.view(c["drop_edge_p_2"], c["drop_feat_p_2"], rng)
        h1 = self.encoder.forward_minibatch(*v1, True, rng)
        h2 = self.encoder.forward_minibatch(*v2, True, rng)
        with ag.no_grad():
            t1 = Tensor(self.target.forward_minibatch(*v1).value)
            t2 = Tensor(self.target.forward_minibatch(*v2).value)
        return bgrl_loss(self.predictor(h1), t2, self.predictor(h2), t1)


class GCA(SSLMethod):
    name = "gca"

    def build(self, rng):
        hidden = int(self.cfg["num_hidden"])
        self.encoder = Encoder(self.encoder_config(hidden), rng, "enc")
        self.projector = MLP((hidden, int(self.cfg["proj_hidden"]), hidden), rng, "proj", "elu")
        self._weights_for = None

    def modules(self):
        return [self.encoder, self.projector]

    def _adaptive(self, batch):
        if self._weights_for is not batch.graph:
            self._weights_for = batch.graph
            c = self.cfg
            self._w = {k: (degree_drop_weights(batch.graph, c[f"drop_edge_rate_{k}"]),
                           degree_feature_weights(batch.graph, batch.features, c[f"drop_feature_rate_{k}"]))
                       for k in (1, 2)}
        return self._w

    def loss(self, batch, rng):
        c = self.cfg
        z = []
        for k in (1, 2):
            if c["centrality"]:
                ew, fw = self._adaptive(batch)[k]
                plan, x = batch.view(0.0, 0.0, rng, ew, fw)
            else:
                plan, x = batch.view(c[f"drop_edge_rate_{k}"], c[f"drop_feature_rate_{k}"], rng)
            z.append(self.projector(self.encoder.forward_minibatch(plan, x, True, rng)))
        return gca_infonce_loss(z[0], z[1], float(c["tau"]))


class GraphMAE(SSLMethod):
    name = "graphmae"

    def build(self, rng):
        c = self.cfg
        if float(c["replace_rate"]) > 0:
            warnings.warn("replace_rate belongs to GraphMAE2 and is ignored", stacklevel=3)
        kind = c["encoder"]
        hidden = int(c["num_hidden"])
        gat = dict(num_heads=int(c["num_heads"]), attn_drop=float(c["attn_drop"]),
                   in_drop=float(c["in_drop"]), negative_slope=float(c["negative_slope"]))
        if kind == "gat" and hidden % gat["num_heads"]:
            raise ConfigError(f"num_hidden={hidden} must be divisible by num_heads={gat['num_heads']}")
        self.encoder = Encoder(self.encoder_config(hidden, kind, **(gat if kind == "gat" else {})), rng, "enc")
        self.enc2dec = MLP((hidden, hidden), rng, "enc2dec", bias=False)
        dec_kw = dict(gat, num_heads=1) if kind == "gat" else {}
        self.decoder = Encoder(EncoderConfig(kind=kind, in_dim=hidden, hidden_dims=(self.in_dim,), **dec_kw),
                               rng, "dec")
        self.mask_token = ag.zeros(1, self.in_dim, "mask_token")

    def modules(self):
        return [self.encoder, self.enc2dec, self.decoder, self.mask_token]

    def loss(self, batch, rng):
        c = self.cfg
        plan, x = batch.view(float(c["drop_edge_rate"]), 0.0, rng)
        n0 = len(plan.output_nodes)
        k = int(np.floor(float(c["mask_rate"]) * n0 + 1e-9))
        if k == 0:
            return None
        idx = np.sort(rng.permutation(n0)[:k])
        m = np.zeros((x.shape[0], 1), dtype=x.dtype)
        m[idx] = 1.0
        x_in = ag.mul(Tensor(x), 1.0 - m) + ag.mul(self.mask_token, m)
        h = self.encoder.forward_minibatch(plan, x_in, True, rng)
        dec_block = plan.blocks[0] if plan.blocks[0].shape[1] == n0 else plan.blocks[0][:, :n0]
        recon = self.decoder.forward_full(dec_block, self.enc2dec(h), True, rng)
        return graphmae_loss(x[idx], ag.index_rows(recon, idx), float(c["alpha_l"]))


class S2GAE(SSLMethod):
    name = "s2gae"

    def build(self, rng):
        c = self.cfg
        hidden = int(c["dim_hidden"])
        self.encoder = Encoder(self.encoder_config(hidden), rng, "enc")
        layers = int(c["decode_layers"])
        dims = (hidden * self.cfg.num_layers,) + (int(c["decode_channels"]),) * (layers - 1) + (1,)
        self.decoder = MLP(dims, rng, "dec", "relu")

    def modules(self):
        return [self.encoder, self.decoder]

    def _pair_logits(self, layers: List[Tensor], pairs: np.ndarray) -> Tensor:
        feats = [ag.index_rows(h, pairs[:, 0]) * ag.index_rows(h, pairs[:, 1]) for h in layers]
        return self.decoder(ag.concat_cols(feats) if len(feats) > 1 else feats[0])

    def loss(self, batch, rng):
        visible, masked = mask_edges(batch.graph, float(self.cfg["mask_ratio"]), rng)
        plan = batch.plan(visible, normalize_adjacency(visible))
        b0 = plan.output_nodes
        pos_map = np.full(batch.graph.num_nodes, -1, dtype=np.int64)
        pos_map[b0] = np.arange(len(b0))
        local = pos_map[masked]
        pos = local[(local >= 0).all(axis=1)]
        if len(pos) == 0:
            return None
        neg = rng.integers(0, len(b0), size=(len(pos), 2))
        layers = self.encoder.forward_minibatch(plan, batch.features[plan.input_nodes], True, rng,
                                                all_layers=True)
        return s2gae_loss(self._pair_logits(layers, pos), self._pair_logits(layers, neg))

    def encode(self, adj, x):
        return ag.concat_cols(self.encoder.forward_full(adj, x, all_layers=True))


METHOD_CLASSES = {cls.name: cls for cls in (GBT, CCASSG, BGRL, GCA, GraphMAE, S2GAE)}


def build_method(cfg: MethodConfig, in_dim: int, seed: int = 0) -> SSLMethod:
    return METHOD_CLASSES[cfg.method](cfg, in_dim, seed)
