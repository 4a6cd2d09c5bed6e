"""Hyper-parameter search spaces and per-method defaults."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np

METHODS = ("gbt", "cca_ssg", "bgrl", "gca", "graphmae", "s2gae")
CONTRASTIVE = ("gbt", "cca_ssg", "bgrl", "gca")
GENERATIVE = ("graphmae", "s2gae")

DROP = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
DIMS = (128, 256, 512, 1024)


@dataclass(frozen=True)
class Choice:
    values: Tuple

    def sample(self, rng: np.random.Generator):
        v = self.values[int(rng.integers(len(self.values)))]
        return type(v)(v)

    def describe(self) -> str:
        return "{" + ", ".join(str(v) for v in self.values) + "}"


@dataclass(frozen=True)
class Range:
    low: float
    high: float
    integer: bool = False

    @property
    def log(self) -> bool:
        return self.low > 0 and self.high / self.low >= 100

    def sample(self, rng: np.random.Generator):
        if self.integer:
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.log:
            return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def describe(self) -> str:
        return f"[{self.low:g}, {self.high:g}]"


Space = Dict[str, Union[Choice, Range]]

GENERAL_SPACE: Space = {
    "lr": Range(1e-6, 1e-2),
    "weight_decay": Range(1e-6, 1e-2),
    "batch_size": Choice((512, 1024, 2048, 4096, 10000, 20000)),
    "decode_channels_lp": Choice((128, 256, 512, 1024)),
    "decode_layers_lp": Choice((1, 2, 4, 8)),
}

METHOD_SPACES: Dict[str, Space] = {
    "bgrl": {
        "drop_edge_p_1": Choice(DROP), "drop_edge_p_2": Choice(DROP),
        "drop_feat_p_1": Choice(DROP), "drop_feat_p_2": Choice(DROP),
    },
    "cca_ssg": {"dfr": Choice(DROP), "der": Choice(DROP), "hid_dim": Choice(DIMS)},
    "gbt": {"emb_dim": Choice(DIMS), "lr_base": Range(1e-6, 1e-2), "p_x": Choice(DROP), "p_e": Choice(DROP)},
    "gca": {
        "num_hidden": Choice(DIMS),
        "drop_edge_rate_1": Choice(DROP), "drop_edge_rate_2": Choice(DROP),
        "drop_feature_rate_1": Choice(DROP), "drop_feature_rate_2": Choice(DROP),
    },
    "graphmae": {
        "num_heads": Choice((1, 2, 4, 8)),
        "num_hidden": Choice((256, 512, 1024)),
        "attn_drop": Choice((0.0, 0.1, 0.2, 0.3, 0.4, 0.5)),
        "in_drop": Choice((0.0, 0.1, 0.2, 0.3, 0.4, 0.5)),
        "negative_slope": Choice((0.0, 0.1, 0.2, 0.3, 0.4, 0.5)),
        "mask_rate": Choice((0.4, 0.5, 0.6, 0.7, 0.8)),
        "drop_edge_rate": Choice((0.0, 0.05, 0.15, 0.20)),
        "alpha_l": Choice((1, 2, 3)),
    },
    "s2gae": {
        "dim_hidden": Choice(DIMS),
        "decode_channels": Choice(DIMS),
        "decode_layers": Range(1, 8, integer=True),
        "mask_ratio": Choice((0.4, 0.5, 0.6, 0.7, 0.8)),
    },
}

# Defaults for every method field; fields outside METHOD_SPACES are fixed settings.
METHOD_DEFAULTS: Dict[str, dict] = {
    "gbt": dict(emb_dim=256, lr_base=None, p_x=0.2, p_e=0.3),
    "cca_ssg": dict(dfr=0.2, der=0.3, hid_dim=256, lambd=1e-3),
    "bgrl": dict(drop_edge_p_1=0.3, drop_edge_p_2=0.2, drop_feat_p_1=0.2, drop_feat_p_2=0.3,
                 hidden=256, pred_hidden=512, ema_decay=0.99),
    "gca": dict(num_hidden=256, drop_edge_rate_1=0.3, drop_edge_rate_2=0.4,
                drop_feature_rate_1=0.2, drop_feature_rate_2=0.3, tau=0.5, proj_hidden=256,
                centrality=False),
    "graphmae": dict(num_heads=4, num_hidden=256, attn_drop=0.1, in_drop=0.2, negative_slope=0.2,
                     mask_rate=0.5, drop_edge_rate=0.0, alpha_l=2, replace_rate=0.0, encoder="gat"),
    "s2gae": dict(dim_hidden=256, decode_channels=256, decode_layers=2, mask_ratio=0.5),
}

# Hard validity bounds (inclusive) used when parsing user configs.
PROBABILITY_FIELDS = {
    "p_x", "p_e", "dfr", "der", "drop_edge_p_1", "drop_edge_p_2", "drop_feat_p_1", "drop_feat_p_2",
    "drop_edge_rate_1", "drop_edge_rate_2", "drop_feature_rate_1", "drop_feature_rate_2",
    "attn_drop", "in_drop", "mask_rate", "drop_edge_rate", "replace_rate", "ema_decay",
    "negative_slope",
}
POSITIVE_INT_FIELDS = {
    "emb_dim", "hid_dim", "hidden", "pred_hidden", "num_hidden", "proj_hidden", "num_heads",
    "dim_hidden", "decode_channels", "decode_layers",
}


def space_for(method: str) -> Space:
    if method not in METHOD_SPACES:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return {**GENERAL_SPACE, **METHOD_SPACES[method]}


def table_set(method: str, key: str) -> str:
    """Printable search set for ``key`` (empty when the key is not searched)."""
    spaces = [METHOD_SPACES.get(method, {}), GENERAL_SPACE]
    for s in spaces:
        if key in s:
            return s[key].describe()
    return ""
