"""Training loop with early stopping, random search, seed aggregation and efficiency profiling."""
from __future__ import annotations

import copy
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autograd as ag
from .errors import ConfigError
from .evaluation import (LinkDecoderConfig, MetricsRecord, ProbeConfig, eval_link_prediction,
                         eval_node_classification, eval_node_clustering)
from .graph import DatasetBundle, build_csr, normalize_adjacency
from .metrics import ari, kmeans, nmi
from .methods import Batch, MethodConfig, SSLMethod, build_method
from .samplers import SamplerConfig, partition_graph
from .space import Space

log = logging.getLogger(__name__)

CRITERIA = ("accuracy", "auc", "nmi")
TASKS = ("nc", "lp", "clu")


@dataclass
class ExperimentConfig:
    dataset: str = ""
    method: MethodConfig = field(default_factory=lambda: MethodConfig("gbt"))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    criterion: str = "accuracy"
    max_epochs: int = 100
    eval_every: int = 5
    patience: int = 5
    seeds: Sequence[int] = (0,)
    budget: int = 30
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    link: LinkDecoderConfig = field(default_factory=LinkDecoderConfig)
    cluster_restarts: int = 10

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion {self.criterion!r} not in {{{', '.join(CRITERIA)}}}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ConfigError("max_epochs and eval_every must be >= 1")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")


@dataclass
class EarlyStopState:
    patience: int
    best_metric: float = -np.inf
    best_epoch: int = 0
    best_checkpoint: Optional[Dict[str, np.ndarray]] = None
    evals_since_improve: int = 0
    evals: int = 0


def early_stop_update(state: EarlyStopState, metric: float, epoch: int = 0,
                      snapshot: Optional[Callable[[], Dict[str, np.ndarray]]] = None) -> str:
    """Record one validation result; returns "continue" or "stop".

    Only a strict improvement resets the counter; ties count against patience.
    """
    if metric is None or not np.isfinite(metric):
        raise ValueError(f"validation metric must be finite, got {metric}")
    state.evals += 1
    if metric > state.best_metric:
        state.best_metric = float(metric)
        state.best_epoch = epoch
        state.evals_since_improve = 0
        if snapshot is not None:
            state.best_checkpoint = snapshot()
    else:
        state.evals_since_improve += 1
    return "stop" if state.evals_since_improve >= state.patience else "continue"


@dataclass
class EfficiencyReport:
    act_mem_mb: float
    throughput_it_s: float
    epochs_run: int
    iterations: int = 0
    train_seconds: float = 0.0


@dataclass
class RunTrace:
    iterations: int = 0
    train_seconds: float = 0.0
    peak_activation_bytes: int = 0
    epochs: int = 0


def profile_efficiency(trace: RunTrace) -> EfficiencyReport:
    if trace.iterations < 1:
        raise ValueError("no training iterations recorded")
    seconds = max(trace.train_seconds, 1e-12)
    return EfficiencyReport(act_mem_mb=trace.peak_activation_bytes / 2 ** 20,
                            throughput_it_s=trace.iterations / seconds,
                            epochs_run=trace.epochs, iterations=trace.iterations,
                            train_seconds=trace.train_seconds)


@dataclass
class TrialResult:
    config: dict
    seed: int
    val: MetricsRecord
    test: MetricsRecord
    efficiency: EfficiencyReport
    best_epoch: int
    best_val_metric: float
    loss_trace: List[float] = field(default_factory=list)
    val_trace: List[float] = field(default_factory=list)
    checkpoint: Optional[str] = None


def aggregate_seeds(values: Sequence[float]):
    """Mean and sample standard deviation (n - 1); a single value has std 0."""
    vals = np.asarray([v for v in values], dtype=np.float64)
    if len(vals) == 0:
        raise ValueError("nothing to aggregate")
    mean = float(vals.mean())
    std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def random_search(space: Space, budget: int, seed: int = 0) -> List[dict]:
    """Seeded random draws from ``space``; log-uniform for wide positive ranges."""
    if not space:
        raise ValueError("empty search space")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    keys = sorted(space)
    return [{k: space[k].sample(rng) for k in keys} for _ in range(budget)]


# -- trial execution -------------------------------------------------------------

class Trial:
    """Everything one (config, seed) run needs; owns its mutable state."""

    def __init__(self, cfg: ExperimentConfig, bundle: DatasetBundle, seed: int):
        if bundle.splits is None:
            raise ConfigError(f"dataset {bundle.name} has no splits")
        self.cfg = cfg
        self.bundle = bundle
        self.seed = seed
        dtype = ag.default_dtype()
        self.x = np.asarray(bundle.features, dtype=dtype)
        # message passing never sees held-out link-prediction edges
        self.graph = build_csr(bundle.splits.lp_train_edges, bundle.graph.num_nodes) \
            if bundle.splits.has_lp else bundle.graph
        self.adj = normalize_adjacency(self.graph)
        self.method: SSLMethod = build_method(cfg.method, self.x.shape[1], seed)
        self.partition = None
        if cfg.sampler.strategy == "subgraph":
            self.partition = partition_graph(self.graph, min(cfg.sampler.num_clusters, self.graph.num_nodes), seed)

    def batches(self, epoch: int, rng: np.random.Generator):
        s = self.cfg.sampler
        k = self.cfg.method.num_layers
        common = dict(graph=self.graph, adj=self.adj, features=self.x, num_layers=k)
        if s.strategy == "full":
            yield Batch(strategy="full", **common)
        elif s.strategy == "node":
            perm = rng.permutation(self.graph.num_nodes)
            for start in range(0, len(perm), s.batch_size):
                yield Batch(strategy="node", seeds=np.sort(perm[start:start + s.batch_size]),
                            fanouts=s.fanouts, plan_seed=int(rng.integers(2 ** 31)), **common)
        else:
            order = rng.permutation(self.partition.num_clusters)
            for start in range(0, len(order), s.clusters_per_batch):
                yield Batch(strategy="subgraph", partition=self.partition,
                            cluster_ids=order[start:start + s.clusters_per_batch],
                            renormalize=s.renormalize, **common)

    def embed(self) -> np.ndarray:
        return self.method.embed(self.adj, self.x)

    def probe_cfg(self):
        return ProbeConfig(**{**asdict(self.cfg.probe), "seed": self.seed})

    def link_cfg(self):
        return LinkDecoderConfig(**{**asdict(self.cfg.link), "seed": self.seed})

    def validation_metric(self, h: np.ndarray) -> float:
        c = self.cfg.criterion
        b = self.bundle
        if c == "accuracy":
            return eval_node_classification(h, b.labels, b.splits, self.probe_cfg())["val_acc"]
        if c == "auc":
            return eval_link_prediction(h, b.splits, self.link_cfg())["val_auc"]
        return eval_node_clustering(h, b.labels, restarts=self.cfg.cluster_restarts, seed=self.seed,
                                    mask=b.splits.val_mask)["nmi"]

    def evaluate_all(self, h: np.ndarray, tasks: Sequence[str] = TASKS):
        """Val/test records for the requested downstream tasks (nc, lp, clu)."""
        unknown = set(tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown task(s) {sorted(unknown)}; expected a subset of {{{', '.join(TASKS)}}}")
        b = self.bundle
        val, test = MetricsRecord(), MetricsRecord()
        if "nc" in tasks:
            nc = eval_node_classification(h, b.labels, b.splits, self.probe_cfg())
            val.accuracy, test.accuracy = nc["val_acc"], nc["test_acc"]
        if "lp" in tasks and b.splits.has_lp:
            lp = eval_link_prediction(h, b.splits, self.link_cfg())
            val.auc, val.ap, test.auc, test.ap = lp["val_auc"], lp["val_ap"], lp["test_auc"], lp["test_ap"]
        if "clu" in tasks:
            # one clustering of all nodes, scored separately on each split
            pred = kmeans(h, b.num_classes, restarts=self.cfg.cluster_restarts, seed=self.seed).labels
            for rec, mask in ((val, b.splits.val_mask), (test, b.splits.test_mask)):
                rec.nmi = nmi(b.labels[mask], pred[mask])
                rec.ari = ari(b.labels[mask], pred[mask])
        return val, test


def run_training(cfg: ExperimentConfig, bundle: DatasetBundle, seed: int,
                 run_dir: Optional[Path] = None,
                 validation_fn: Optional[Callable[[np.ndarray, int], float]] = None) -> TrialResult:
    """Pre-train, early-stop on the validation criterion, test the best checkpoint on all tasks."""
    trial = Trial(cfg, bundle, seed)
    rng = np.random.default_rng(seed + 1)
    state = EarlyStopState(cfg.patience)
    trace = RunTrace()
    losses, vals = [], []
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        for batch in trial.batches(epoch, rng):
            loss = trial.method.training_step(batch, rng)
            if loss is None:
                continue
            trace.iterations += 1
            trace.peak_activation_bytes = max(trace.peak_activation_bytes, trial.method.last_activation_bytes)
            losses.append(loss)
        trace.train_seconds += time.perf_counter() - t0
        trace.epochs = epoch
        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            h = trial.embed()
            metric = validation_fn(h, epoch) if validation_fn else trial.validation_metric(h)
            vals.append(metric)
            if early_stop_update(state, metric, epoch, trial.method.state_dict) == "stop":
                break
    trial.method.load_state_dict(state.best_checkpoint)
    val, test = trial.evaluate_all(trial.embed())
    ckpt = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt = str(run_dir / f"ckpt_seed{seed}.bin")
        ag.save_checkpoint(ckpt, state.best_checkpoint)
    eff = profile_efficiency(trace) if trace.iterations else EfficiencyReport(0.0, 0.0, trace.epochs)
    return TrialResult(config=experiment_snapshot(cfg), seed=seed, val=val, test=test, efficiency=eff,
                       best_epoch=state.best_epoch, best_val_metric=state.best_metric,
                       loss_trace=losses, val_trace=vals, checkpoint=ckpt)


def evaluate_checkpoint(cfg: ExperimentConfig, bundle: DatasetBundle, seed: int, state: Dict[str, np.ndarray],
                        tasks: Sequence[str] = TASKS):
    """Rebuild a trial, load ``state`` and return (validation metric, val record, test record)."""
    trial = Trial(cfg, bundle, seed)
    trial.method.load_state_dict(state)
    h = trial.embed()
    val, test = trial.evaluate_all(h, tasks)
    return trial.validation_metric(h), val, test


def profile_run(cfg: ExperimentConfig, bundle: DatasetBundle, seed: int, epochs: Optional[int] = None,
                max_iterations: Optional[int] = None) -> EfficiencyReport:
    """Training iterations only, no evaluation; reports memory and throughput."""
    trial = Trial(cfg, bundle, seed)
    rng = np.random.default_rng(seed + 1)
    trace = RunTrace()
    for epoch in range(1, (epochs or cfg.max_epochs) + 1):
        for batch in trial.batches(epoch, rng):
            t0 = time.perf_counter()
            loss = trial.method.training_step(batch, rng)
            trace.train_seconds += time.perf_counter() - t0
            if loss is None:
                continue
            trace.iterations += 1
            trace.peak_activation_bytes = max(trace.peak_activation_bytes, trial.method.last_activation_bytes)
            if max_iterations is not None and trace.iterations >= max_iterations:
                break
        trace.epochs = epoch
        if max_iterations is not None and trace.iterations >= max_iterations:
            break
    return profile_efficiency(trace)


def untrained_result(cfg: ExperimentConfig, bundle: DatasetBundle, seed: int):
    """Metrics of the randomly initialised encoder of the same architecture."""
    trial = Trial(cfg, bundle, seed)
    return trial.evaluate_all(trial.embed())


def experiment_snapshot(cfg: ExperimentConfig) -> dict:
    return {
        "dataset": cfg.dataset,
        "method": cfg.method.to_dict(),
        "sampler": asdict(cfg.sampler),
        "criterion": cfg.criterion,
        "max_epochs": cfg.max_epochs,
        "eval_every": cfg.eval_every,
        "patience": cfg.patience,
        "seeds": list(cfg.seeds),
        "budget": cfg.budget,
        "probe": asdict(cfg.probe),
        "link": asdict(cfg.link),
        "cluster_restarts": cfg.cluster_restarts,
    }


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHFM_THREADS", "1")))
    except ValueError:
        raise ConfigError("GRAPHFM_THREADS must be an integer")


def run_seeds(cfg: ExperimentConfig, bundle: DatasetBundle, run_dir: Optional[Path] = None) -> List[TrialResult]:
    """One trial per seed, concurrently up to GRAPHFM_THREADS; results in seed order."""
    workers = min(worker_count(), len(cfg.seeds))
    if workers == 1:
        return [run_training(cfg, bundle, s, run_dir) for s in cfg.seeds]
    with ThreadPoolExecutor(workers) as pool:
        futures = [pool.submit(run_training, cfg, bundle, s, run_dir) for s in cfg.seeds]
        return [f.result() for f in futures]


def apply_sample(cfg: ExperimentConfig, sample: dict) -> ExperimentConfig:
    """A copy of ``cfg`` with one random-search draw applied."""
    m = cfg.method
    params = dict(m.params)
    top = {}
    link = asdict(cfg.link)
    sampler = asdict(cfg.sampler)
    for k, v in sample.items():
        if k in ("lr", "weight_decay"):
            top[k] = v
        elif k in ("decode_channels_lp", "decode_layers_lp"):
            link[k] = v
        elif k == "batch_size":
            sampler[k] = v
        else:
            params[k] = v
    method = MethodConfig(m.method, lr=top.get("lr", m.lr), weight_decay=top.get("weight_decay", m.weight_decay),
                          num_layers=m.num_layers, activation=m.activation, params=params)
    out = copy.copy(cfg)
    out.method = method
    out.link = LinkDecoderConfig(**link)
    out.sampler = SamplerConfig(**sampler)
    return out


def search(cfg: ExperimentConfig, bundle: DatasetBundle, space: Space, seed: int = 0):
    """Random search scored on the first seed; returns (best config, all (sample, val metric) pairs)."""
    draws = random_search(space, cfg.budget, seed)
    scored = []
    for i, sample in enumerate(draws):
        res = run_training(apply_sample(cfg, sample), bundle, cfg.seeds[0])
        scored.append((sample, res.best_val_metric))
        log.info("sweep %d/%d val=%.4f", i + 1, len(draws), res.best_val_metric)
    best_sample = max(scored, key=lambda t: t[1])[0]
    return apply_sample(cfg, best_sample), scored


def sweep(cfg: ExperimentConfig, bundle: DatasetBundle, space: Space, seed: int = 0,
          run_dir: Optional[Path] = None):
    """Random search, then the winning draw re-run on every seed.

    Returns (best config, its trial results, all (sample, val metric) pairs).
    """
    best_cfg, scored = search(cfg, bundle, space, seed)
    return best_cfg, run_seeds(best_cfg, bundle, run_dir), scored
