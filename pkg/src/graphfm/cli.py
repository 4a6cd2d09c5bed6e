"""Command-line entry point: gen-data, train, eval, sweep, bench."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import autograd as ag
from .errors import ConfigError, DataError, GraphFMError, NumericError
from .graph import sbm_generate
from .io import (RunManifest, emit_plots, emit_results, load_dataset, parse_config, result_row, save_dataset,
                 serialize_config)
from .runner import TASKS, evaluate_checkpoint, profile_run, run_seeds, search
from .space import METHODS, space_for

log = logging.getLogger("graphfm")

STRATEGIES = ("full", "node", "subgraph")


def _seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}")


def _set_pairs(pairs) -> Dict[str, dict]:
    """``section.key=value`` strings into an override mapping."""
    from .io import _parse_value
    out: Dict[str, dict] = {}
    for item in pairs or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, rhs = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        out.setdefault(sec.strip(), {})[key.strip()] = _parse_value(rhs)
    return out


def _overrides(args) -> Dict[str, dict]:
    ov = _set_pairs(getattr(args, "set", None))
    exp, method, sampler = ov.setdefault("experiment", {}), ov.setdefault("method", {}), ov.setdefault("sampler", {})
    if getattr(args, "dataset", None):
        exp["dataset"] = str(args.dataset)
    if getattr(args, "criterion", None):
        exp["criterion"] = args.criterion
    if getattr(args, "seeds", None):
        exp["seeds"] = _seeds(args.seeds)
    if getattr(args, "budget", None) is not None:
        exp["budget"] = args.budget
    if getattr(args, "max_epochs", None) is not None:
        exp["max_epochs"] = args.max_epochs
    if getattr(args, "method", None):
        method["method"] = args.method
    if getattr(args, "strategy", None):
        sampler["strategy"] = args.strategy
    return {k: v for k, v in ov.items() if v}


def _load_cfg(args):
    return parse_config(args.config, _overrides(args))


def _prepare_run(out: Path, cfg, bundle, command: str):
    manifest = RunManifest.start(cfg, bundle, command)
    run_dir = out / "runs" / manifest.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(serialize_config(cfg))
    return manifest, run_dir


def _finish_run(out: Path, run_dir: Path, manifest: RunManifest, rows, plots: bool = True):
    emit_results(rows, run_dir)
    # the latest run's results are mirrored at the top of the output directory
    paths = emit_results(rows, out)
    if plots:
        emit_plots(rows, run_dir / "plots")
    manifest.finish()
    manifest.write(run_dir)
    sys.stdout.write(paths["summary"].read_text())
    log.info("run directory: %s", run_dir)


def _rows(results, dataset: str, profile: bool):
    rows = []
    for r in results:
        row = result_row(r, dataset)
        if not profile:
            # wall-clock throughput differs between identical runs; only reported with --profile
            row["throughput_it_s"] = None
        rows.append(row)
    return rows


def cmd_gen_data(args) -> int:
    bundle = sbm_generate(args.blocks, args.nodes_per_block, args.p_in, args.p_out, args.feat_dim,
                          args.feat_noise, seed=args.seed, name=args.name or f"sbm{args.blocks}x{args.nodes_per_block}")
    save_dataset(bundle, args.out, split_seed=args.seed)
    print(json.dumps(bundle.fingerprint()))
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if not cfg.dataset:
        raise ConfigError("no dataset given (--dataset or [experiment] dataset)")
    bundle = load_dataset(cfg.dataset)
    out = Path(args.out)
    manifest, run_dir = _prepare_run(out, cfg, bundle, "train")
    results = run_seeds(cfg, bundle, run_dir)
    _finish_run(out, run_dir, manifest, _rows(results, bundle.name, args.profile))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    if not cfg.dataset:
        raise ConfigError("no dataset given (--dataset or [experiment] dataset)")
    bundle = load_dataset(cfg.dataset)
    out = Path(args.out)
    space = space_for(cfg.method.method)
    best_cfg, scored = search(cfg, bundle, space, seed=args.seed)
    manifest, run_dir = _prepare_run(out, best_cfg, bundle, "sweep")
    keys = sorted(space)
    with open(run_dir / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trial"] + keys + ["val_metric"])
        for i, (sample, metric) in enumerate(scored):
            w.writerow([i] + [sample[k] for k in keys] + [repr(float(metric))])
    results = run_seeds(best_cfg, bundle, run_dir)
    _finish_run(out, run_dir, manifest, _rows(results, bundle.name, args.profile))
    return 0


def _checkpoint_seed(path: Path, explicit: Optional[int]) -> int:
    if explicit is not None:
        return explicit
    m = re.search(r"seed(-?\d+)", path.stem)
    if not m:
        raise ConfigError(f"cannot infer the seed from {path.name}; pass --seed")
    return int(m.group(1))


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint {ckpt} not found")
    config = args.config or ckpt.parent / "config.ini"
    if not Path(config).exists():
        raise ConfigError(f"no config next to {ckpt.name}; pass --config")
    args.config = config
    cfg = _load_cfg(args)
    bundle = load_dataset(args.dataset or cfg.dataset)
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    bad = set(tasks) - set(TASKS)
    if bad:
        raise ConfigError(f"unknown task(s) {sorted(bad)}; expected a subset of {{{', '.join(TASKS)}}}")
    seed = _checkpoint_seed(ckpt, args.seed)
    try:
        state = ag.load_checkpoint(ckpt)
    except ValueError as e:
        raise DataError(str(e))
    _, _, test = evaluate_checkpoint(cfg, bundle, seed, state, tasks)
    row = {"dataset": bundle.name, "method": cfg.method.method, "strategy": cfg.sampler.strategy,
           "criterion": cfg.criterion, "seed": seed, **test.as_dict(), "act_mem_mb": None,
           "throughput_it_s": None, "best_epoch": None}
    paths = emit_results([row], args.out)
    sys.stdout.write(paths["summary"].read_text())
    return 0


def cmd_bench(args) -> int:
    strategies = [s.strip() for s in (args.strategy or ",".join(STRATEGIES)).split(",") if s.strip()]
    bad = sorted(set(strategies) - set(STRATEGIES))
    if bad:
        raise ConfigError(f"unknown strategy {bad[0]!r}; expected a subset of {{{', '.join(STRATEGIES)}}}")
    args.strategy = None
    base = _load_cfg(args)
    if not base.dataset:
        raise ConfigError("no dataset given (--dataset or [experiment] dataset)")
    bundle = load_dataset(base.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for strategy in strategies:
        cfg = parse_config(args.config, {**_overrides(args), "sampler": {**_overrides(args).get("sampler", {}),
                                                                          "strategy": strategy}})
        for seed in cfg.seeds:
            rep = profile_run(cfg, bundle, seed, epochs=args.epochs, max_iterations=args.iterations)
            rows.append({"strategy": strategy, "seed": seed, "act_mem_mb": rep.act_mem_mb,
                         "throughput_it_s": rep.throughput_it_s, "iterations": rep.iterations,
                         "epochs": rep.epochs_run})
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['strategy']:<9} seed={r['seed']:<3} act_mem={r['act_mem_mb']:.3f} MB "
              f"throughput={r['throughput_it_s']:.2f} it/s")
    return 0


def _add_train_flags(p: argparse.ArgumentParser, strategy_list: bool = False):
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--method", choices=METHODS)
    if strategy_list:
        p.add_argument("--strategy", help="comma-separated subset of full,node,subgraph")
    else:
        p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--criterion", choices=("accuracy", "auc", "nmi"))
    p.add_argument("--seeds", help='comma-separated seeds, e.g. "1,2,3,4,5"')
    p.add_argument("--config", help="key = value config file with [sections]")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--profile", action="store_true", help="record wall-clock throughput in the results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphfm", description="Self-supervised graph learning benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a stochastic block model dataset")
    g.add_argument("--blocks", type=int, required=True)
    g.add_argument("--nodes-per-block", type=int, required=True, dest="nodes_per_block")
    g.add_argument("--p-in", type=float, required=True, dest="p_in")
    g.add_argument("--p-out", type=float, required=True, dest="p_out")
    g.add_argument("--feat-dim", type=int, required=True, dest="feat_dim")
    g.add_argument("--feat-noise", type=float, default=1.0, dest="feat_noise")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="pre-train with early stopping and evaluate all tasks")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="random hyper-parameter search, then multi-seed run of the best draw")
    _add_train_flags(s)
    s.add_argument("--budget", type=int)
    s.add_argument("--seed", type=int, default=0, help="search seed")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset")
    e.add_argument("--tasks", default="nc,lp,clu")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", default="out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="efficiency-only run: activation memory and throughput")
    _add_train_flags(b, strategy_list=True)
    b.add_argument("--epochs", type=int, default=1)
    b.add_argument("--iterations", type=int, help="stop after this many iterations")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GraphFMError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
