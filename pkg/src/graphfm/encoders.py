"""GCN, GAT and MLP encoders runnable on the full graph or on a BatchPlan."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .graph import NormalizedAdjacency
from .samplers import BatchPlan


@dataclass
class EncoderConfig:
    kind: str = "gcn"
    in_dim: int = 0
    hidden_dims: Sequence[int] = (256, 256)
    activation: str = "prelu"
    dropout: float = 0.0
    bias: bool = True
    # GAT only
    num_heads: int = 1
    attn_drop: float = 0.0
    in_drop: float = 0.0
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("gcn", "gat", "mlp"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if len(self.hidden_dims) < 1:
            raise ValueError("encoder needs at least one layer")
        if self.in_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ValueError("encoder dimensions must be positive")
        if self.kind == "gat":
            if self.num_heads < 1:
                raise ValueError("num_heads must be >= 1")
            for d in self.hidden_dims[:-1]:
                if d % self.num_heads:
                    raise ValueError(f"hidden dim {d} not divisible by {self.num_heads} heads")

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims)

    @property
    def out_dim(self) -> int:
        return self.hidden_dims[-1]


class Encoder:
    """K-layer message-passing stack; activation between layers, none after the last."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "enc"):
        self.cfg = cfg
        self.params: Dict[str, Tensor] = {}
        dims = (cfg.in_dim,) + cfg.hidden_dims
        for l in range(cfg.num_layers):
            fin, fout = dims[l], dims[l + 1]
            p = f"{prefix}.{l}"
            if cfg.kind == "gat":
                last = l == cfg.num_layers - 1
                per_head = fout if last else fout // cfg.num_heads
                width = per_head * cfg.num_heads
                self.params[f"{p}.weight"] = ag.xavier_uniform(rng, fin, width, f"{p}.weight")
                self.params[f"{p}.att_src"] = ag.xavier_uniform(rng, per_head, cfg.num_heads, f"{p}.att_src")
                self.params[f"{p}.att_dst"] = ag.xavier_uniform(rng, per_head, cfg.num_heads, f"{p}.att_dst")
            else:
                self.params[f"{p}.weight"] = ag.xavier_uniform(rng, fin, fout, f"{p}.weight")
            if cfg.bias:
                self.params[f"{p}.bias"] = ag.zeros(1, fout, f"{p}.bias")
            if l < cfg.num_layers - 1 and cfg.activation == "prelu":
                self.params[f"{p}.prelu"] = ag.parameter(np.full((1, fout), 0.25), f"{p}.prelu")
        self.prefix = prefix

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    # -- layers ---------------------------------------------------------------

    def _gcn_layer(self, l: int, block, h: Tensor, training: bool, rng) -> Tensor:
        p = f"{self.prefix}.{l}"
        h = ag.dropout(h, self.cfg.dropout, rng, training)
        z = ag.spmm(block, h @ self.params[f"{p}.weight"]) if block is not None else h @ self.params[f"{p}.weight"]
        if self.cfg.bias:
            z = z + self.params[f"{p}.bias"]
        return z

    def _gat_layer(self, l: int, block: sp.csr_matrix, h: Tensor, training: bool, rng) -> Tensor:
        cfg = self.cfg
        p = f"{self.prefix}.{l}"
        last = l == cfg.num_layers - 1
        n_out = block.shape[0]
        h = ag.dropout(h, cfg.in_drop, rng, training)
        wh = h @ self.params[f"{p}.weight"]
        a_src, a_dst = self.params[f"{p}.att_src"], self.params[f"{p}.att_dst"]
        per_head = a_src.shape[0]
        rows = np.repeat(np.arange(n_out), np.diff(block.indptr))
        outs = []
        for k in range(cfg.num_heads):
            hk = ag.slice_cols(wh, k * per_head, (k + 1) * per_head)
            e_src = hk @ ag.slice_cols(a_src, k, k + 1)
            e_dst = ag.slice_rows(hk, n_out) @ ag.slice_cols(a_dst, k, k + 1)
            logits = ag.index_rows(e_src, block.indices) + ag.index_rows(e_dst, rows)
            alpha = ag.segment_softmax(ag.leaky_relu(logits, cfg.negative_slope), block.indptr)
            alpha = ag.dropout(alpha, cfg.attn_drop, rng, training)
            outs.append(ag.edge_weighted_sum(alpha, hk, block.indptr, block.indices, n_out))
        if last:
            z = outs[0]
            for o in outs[1:]:
                z = z + o
            if len(outs) > 1:
                z = z * (1.0 / len(outs))
        else:
            z = ag.concat_cols(outs) if len(outs) > 1 else outs[0]
        if cfg.bias:
            z = z + self.params[f"{p}.bias"]
        return z

    def _act(self, l: int, z: Tensor) -> Tensor:
        name = self.cfg.activation
        if name == "prelu":
            return ag.prelu(z, self.params[f"{self.prefix}.{l}.prelu"])
        return ag.activation(name, z)

    def _run(self, blocks, x: Tensor, training: bool, rng, collect: bool):
        h = x
        outs = []
        for l in range(self.cfg.num_layers):
            block = blocks[l] if blocks is not None else None
            if self.cfg.kind == "gat":
                z = self._gat_layer(l, block, h, training, rng)
            else:
                z = self._gcn_layer(l, block if self.cfg.kind == "gcn" else None, h, training, rng)
            if l < self.cfg.num_layers - 1:
                z = self._act(l, z)
            outs.append(z)
            h = z
        return outs if collect else outs[-1]

    # -- public entry points ----------------------------------------------------

    def forward_full(self, adj: NormalizedAdjacency, x, training: bool = False,
                     rng: Optional[np.random.Generator] = None, all_layers: bool = False):
        x = ag._as_tensor(x)
        m = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
        if m.shape[1] != x.shape[0]:
            raise ValueError(f"adjacency {m.shape} does not match features {x.shape}")
        return self._run([m] * self.cfg.num_layers, x, training, rng, all_layers)

    def forward_minibatch(self, plan: BatchPlan, x_restricted, training: bool = False,
                          rng: Optional[np.random.Generator] = None, all_layers: bool = False):
        """Run on a plan; ``x_restricted`` holds the features of ``plan.input_nodes``.

        Output rows follow ``plan.output_nodes``. With ``all_layers`` each
        intermediate output is trimmed to the ``B_0`` rows.
        """
        if plan.num_layers != self.cfg.num_layers:
            raise ValueError(f"plan has {plan.num_layers} blocks, encoder has {self.cfg.num_layers} layers")
        x = ag._as_tensor(x_restricted)
        if x.shape[0] != len(plan.input_nodes):
            raise ValueError("restricted features do not match the plan's input nodes")
        # layer 0 consumes the outermost block
        blocks = list(reversed(plan.blocks))
        outs = self._run(blocks, x, training, rng, True)
        n0 = len(plan.output_nodes)
        outs = [ag.slice_rows(o, n0) for o in outs]
        return outs if all_layers else outs[-1]

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}


class MLP:
    """Dense feed-forward head; used as projector, predictor and decoder."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, prefix: str,
                 activation: str = "relu", bias: bool = True):
        self.dims = tuple(int(d) for d in dims)
        self.activation = activation
        self.prefix = prefix
        self.params: Dict[str, Tensor] = {}
        for l in range(len(self.dims) - 1):
            self.params[f"{prefix}.{l}.weight"] = ag.xavier_uniform(rng, self.dims[l], self.dims[l + 1],
                                                                     f"{prefix}.{l}.weight")
            if bias:
                self.params[f"{prefix}.{l}.bias"] = ag.zeros(1, self.dims[l + 1], f"{prefix}.{l}.bias")
            if l < len(self.dims) - 2 and activation == "prelu":
                self.params[f"{prefix}.{l}.prelu"] = ag.parameter(np.full((1, self.dims[l + 1]), 0.25))

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def __call__(self, x, training: bool = False, dropout: float = 0.0, rng=None) -> Tensor:
        h = ag._as_tensor(x)
        n = len(self.dims) - 1
        for l in range(n):
            h = h @ self.params[f"{self.prefix}.{l}.weight"]
            b = self.params.get(f"{self.prefix}.{l}.bias")
            if b is not None:
                h = h + b
            if l < n - 1:
                if self.activation == "prelu":
                    h = ag.prelu(h, self.params[f"{self.prefix}.{l}.prelu"])
                else:
                    h = ag.activation(self.activation, h)
                h = ag.dropout(h, dropout, rng, training)
        return h
