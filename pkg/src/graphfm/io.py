"""Dataset directories, experiment config files, run manifests and result emission."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import uuid
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import LinkDecoderConfig, ProbeConfig
from .graph import DatasetBundle, build_csr, make_splits
from .methods import MethodConfig
from .runner import CRITERIA, ExperimentConfig, TrialResult, aggregate_seeds
from .samplers import SamplerConfig
from .space import METHOD_DEFAULTS, METHODS

TOOL_VERSION = "0.1.0"


# -- datasets --------------------------------------------------------------------

def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: meta.json missing")
    except json.JSONDecodeError as e:
        raise DataError(f"{path / 'meta.json'}: invalid JSON ({e})")
    for key in ("name", "num_nodes", "num_edges", "feat_dim", "num_classes"):
        if key not in meta:
            raise DataError(f"{path / 'meta.json'}: missing field {key!r}")
    return meta


def _read_int_rows(path: Path, width: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"{path} missing")
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path.name} row {lineno}: expected {width} column(s), got {len(row)}")
            try:
                rows.append([int(c) for c in row])
            except ValueError:
                raise DataError(f"{path.name} row {lineno}: non-integer value {row!r}")
    return np.asarray(rows, dtype=np.int64).reshape(-1, width)


def load_dataset(path) -> DatasetBundle:
    """Read a dataset directory and validate it against its meta.json counts."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"dataset directory {path} not found")
    meta = _read_meta(path)
    n, d = int(meta["num_nodes"]), int(meta["feat_dim"])
    edges = _read_int_rows(path / "edges.csv", 2)
    bad = np.flatnonzero((edges < 0).any(1) | (edges >= n).any(1))
    if len(bad):
        r = int(bad[0])
        raise DataError(f"edges.csv row {r + 1}: edge ({edges[r, 0]}, {edges[r, 1]}) references a node "
                        f"outside [0, {n})")
    graph = build_csr(edges, n)
    if graph.num_edges != int(meta["num_edges"]):
        raise DataError(f"meta.json says {meta['num_edges']} edges but edges.csv holds {graph.num_edges} "
                        f"distinct undirected edges")
    raw = (path / "features.bin").read_bytes() if (path / "features.bin").exists() else None
    if raw is None:
        raise DataError(f"{path / 'features.bin'} missing")
    if len(raw) != n * d * 4:
        raise DataError(f"features.bin has {len(raw)} bytes, expected {n}x{d}x4 = {n * d * 4}")
    features = np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float32)
    labels = _read_int_rows(path / "labels.csv", 1).ravel()
    if len(labels) != n:
        raise DataError(f"labels.csv has {len(labels)} rows, expected {n}")
    if len(labels) and labels.min() < 0:
        r = int(np.flatnonzero(labels < 0)[0])
        raise DataError(f"labels.csv row {r + 1}: negative label {labels[r]}")
    num_classes = int(labels.max()) + 1 if n else 0
    if num_classes != int(meta["num_classes"]):
        raise DataError(f"meta.json says {meta['num_classes']} classes but labels.csv holds {num_classes}")
    public = None
    if (path / "splits.json").exists():
        public = json.loads((path / "splits.json").read_text())
        for key in ("train", "val", "test"):
            idx = np.asarray(public.get(key, []), dtype=np.int64)
            if key not in public:
                raise DataError(f"splits.json: missing {key!r}")
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise DataError(f"splits.json: {key} index out of range")
    splits = make_splits(graph, seed=int(meta.get("split_seed", 0)), public=public)
    return DatasetBundle(str(meta["name"]), graph, features, labels, splits)


def save_dataset(bundle: DatasetBundle, path, split_seed: int = 0) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {**bundle.fingerprint(), "split_seed": int(split_seed)}
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    edges = bundle.graph.edge_array()
    (path / "edges.csv").write_text("".join(f"{u},{v}\n" for u, v in edges.tolist()))
    (path / "features.bin").write_bytes(np.ascontiguousarray(bundle.features, dtype="<f4").tobytes())
    (path / "labels.csv").write_text("".join(f"{int(y)}\n" for y in bundle.labels))
    if bundle.splits is not None:
        s = bundle.splits
        payload = {k: np.flatnonzero(m).tolist() for k, m in
                   (("train", s.train_mask), ("val", s.val_mask), ("test", s.test_mask))}
        (path / "splits.json").write_text(json.dumps(payload) + "\n")


# -- experiment configs ----------------------------------------------------------

EXPERIMENT_KEYS = ("dataset", "criterion", "max_epochs", "eval_every", "patience", "seeds", "budget",
                   "cluster_restarts")
METHOD_TOP_KEYS = ("method", "lr", "weight_decay", "num_layers", "activation")
SECTIONS = ("experiment", "method", "sampler", "probe", "link")


def _defaults() -> Dict[str, dict]:
    cfg = ExperimentConfig()
    return {
        "experiment": {k: getattr(cfg, k) for k in EXPERIMENT_KEYS},
        "method": {"method": "gbt", "lr": 1e-3, "weight_decay": 1e-5, "num_layers": 2, "activation": None},
        "sampler": asdict(SamplerConfig()),
        "probe": {k: v for k, v in asdict(ProbeConfig()).items() if k != "seed"},
        "link": {k: v for k, v in asdict(LinkDecoderConfig()).items() if k != "seed"},
    }


def _parse_value(text: str):
    t = text.strip()
    if t == "":
        return ""
    if t.lower() in ("none", "null"):
        return None
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if "," in t:
        return [_parse_value(p) for p in t.split(",") if p.strip()]
    return t.strip('"').strip("'")


def _coerce(section: str, key: str, value, template):
    """Cast ``value`` to the type of ``template``; raise on a mismatch."""
    where = f"[{section}] {key}"
    if template is None or value is None:
        return value
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(template, (tuple, list)):
        items = value if isinstance(value, list) else [value]
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in items):
            raise ConfigError(f"{where}: expected a comma-separated integer list, got {value!r}")
        return tuple(items)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _method_param_template(method: str, key: str):
    default = METHOD_DEFAULTS[method][key]
    if key == "lr_base":
        return 0.0
    return default


def config_from_sections(sections: Dict[str, dict]) -> ExperimentConfig:
    """Build a validated ExperimentConfig from raw section/key/value maps."""
    defaults = _defaults()
    merged = {s: dict(defaults[s]) for s in SECTIONS}
    method_params: dict = {}
    for sec, values in sections.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]; expected one of {', '.join(SECTIONS)}")
        for key, val in values.items():
            if sec == "method" and key not in METHOD_TOP_KEYS:
                method_params[key] = val
                continue
            if key not in defaults[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            merged[sec][key] = _coerce(sec, key, val, defaults[sec][key])
    m = merged["method"]
    if m["method"] not in METHODS:
        raise ConfigError(f"unknown method {m['method']!r}; expected one of {{{', '.join(METHODS)}}}")
    params = {}
    for key, val in method_params.items():
        if key not in METHOD_DEFAULTS[m["method"]]:
            raise ConfigError(f"unknown key {key!r} in [method] for method {m['method']}")
        params[key] = _coerce("method", key, val, _method_param_template(m["method"], key))
    exp = merged["experiment"]
    if exp["criterion"] not in CRITERIA:
        raise ConfigError(f"criterion {exp['criterion']!r} must be one of {{{', '.join(CRITERIA)}}}")
    try:
        method = MethodConfig(m["method"], lr=m["lr"], weight_decay=m["weight_decay"],
                              num_layers=m["num_layers"], activation=m["activation"], params=params)
        sampler = SamplerConfig(**merged["sampler"])
        probe = ProbeConfig(**merged["probe"])
        link = LinkDecoderConfig(**merged["link"])
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e))
    return ExperimentConfig(method=method, sampler=sampler, probe=probe, link=link,
                            **{**exp, "seeds": tuple(exp["seeds"])})


def parse_config_text(text: str) -> Dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}")
    return {sec: {k: _parse_value(v) for k, v in parser.items(sec)} for sec in parser.sections()}


def parse_config(path=None, overrides: Optional[Dict[str, dict]] = None, text: Optional[str] = None) -> ExperimentConfig:
    """Config file (or text) with ``overrides`` applied on top; overrides win."""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
    sections = parse_config_text(text) if text else {}
    overrides = overrides or {}
    new_method = overrides.get("method", {}).get("method")
    if new_method is not None and new_method != sections.get("method", {}).get("method", new_method):
        # method-specific keys from the file belong to the replaced method
        sections["method"] = {k: v for k, v in sections["method"].items() if k in METHOD_TOP_KEYS}
    for sec, values in overrides.items():
        sections.setdefault(sec, {}).update(values)
    return config_from_sections(sections)


def config_sections(cfg: ExperimentConfig) -> Dict[str, dict]:
    method = cfg.method.to_dict()
    return {
        "experiment": {"dataset": cfg.dataset, "criterion": cfg.criterion, "max_epochs": cfg.max_epochs,
                       "eval_every": cfg.eval_every, "patience": cfg.patience, "seeds": list(cfg.seeds),
                       "budget": cfg.budget, "cluster_restarts": cfg.cluster_restarts},
        "method": method,
        "sampler": asdict(cfg.sampler),
        "probe": {k: v for k, v in asdict(cfg.probe).items() if k != "seed"},
        "link": {k: v for k, v in asdict(cfg.link).items() if k != "seed"},
    }


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        # a trailing comma keeps one-element lists lists
        return ", ".join(str(x) for x in v) + ("," if len(v) == 1 else "")
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    out = []
    for sec, values in config_sections(cfg).items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {_format_value(values[k])}" for k in sorted(values))
        out.append("")
    return "\n".join(out)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_sections(cfg), sort_keys=True, default=list)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# -- manifests and results -------------------------------------------------------

@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    tool_version: str
    started: str
    finished: Optional[str] = None
    dataset: dict = field(default_factory=dict)
    command: str = ""

    @classmethod
    def start(cls, cfg: ExperimentConfig, bundle: Optional[DatasetBundle] = None, command: str = "") -> "RunManifest":
        h = config_hash(cfg)
        stamp = datetime.now(timezone.utc)
        return cls(run_id=f"{stamp.strftime('%Y%m%dT%H%M%S')}-{h[:8]}-{uuid.uuid4().hex[:6]}", config_hash=h,
                   tool_version=TOOL_VERSION, started=stamp.isoformat(),
                   dataset=bundle.fingerprint() if bundle is not None else {}, command=command)

    def finish(self):
        self.finished = datetime.now(timezone.utc).isoformat()

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / "manifest.json"
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return p


RESULT_COLUMNS = ("dataset", "method", "strategy", "criterion", "seed", "acc", "auc", "ap", "nmi", "ari",
                  "act_mem_mb", "throughput_it_s", "best_epoch")
METRIC_COLUMNS = ("acc", "auc", "ap", "nmi", "ari", "act_mem_mb", "throughput_it_s")


def result_row(res: TrialResult, dataset: str) -> dict:
    cfg = res.config
    row = {"dataset": dataset, "method": cfg["method"]["method"], "strategy": cfg["sampler"]["strategy"],
           "criterion": cfg["criterion"], "seed": res.seed, **res.test.as_dict(),
           "act_mem_mb": res.efficiency.act_mem_mb, "throughput_it_s": res.efficiency.throughput_it_s,
           "best_epoch": res.best_epoch}
    return row


def _clean(v):
    if v is None:
        return None
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _cell(v) -> str:
    v = _clean(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summarize(rows: Sequence[dict]) -> List[dict]:
    """Mean and sample std per (dataset, method, strategy, criterion) group."""
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["method"], r["strategy"], r["criterion"]), []).append(r)
    out = []
    for key in sorted(groups):
        g = groups[key]
        entry = dict(zip(("dataset", "method", "strategy", "criterion"), key), n=len(g))
        for m in METRIC_COLUMNS:
            vals = [_clean(r.get(m)) for r in g]
            vals = [v for v in vals if v is not None]
            entry[m] = aggregate_seeds(vals) if vals else None
        out.append(entry)
    return out


def format_mean_std(ms, scale: float = 1.0) -> str:
    if ms is None:
        return "-"
    mean, std = ms
    return f"{mean * scale:.2f}±{std * scale:.2f}"


def summary_table(rows: Sequence[dict]) -> str:
    """Plain-text table; metrics in [0, 1] are shown as percentages."""
    header = ["dataset", "method", "strategy", "criterion", "n", "acc", "auc", "ap", "nmi", "ari",
              "act_mem_mb", "it/s"]
    lines = []
    for e in summarize(rows):
        cells = [e["dataset"], e["method"], e["strategy"], e["criterion"], str(e["n"])]
        cells += [format_mean_std(e[m], 100.0 if _is_fraction(rows, m) else 1.0)
                  for m in ("acc", "auc", "ap", "nmi", "ari")]
        cells += [format_mean_std(e["act_mem_mb"]), format_mean_std(e["throughput_it_s"])]
        lines.append(cells)
    widths = [max(len(h), *(len(c[i]) for c in lines)) if lines else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(header)] + [fmt(c) for c in lines]) + "\n"


def _is_fraction(rows, metric) -> bool:
    vals = [_clean(r.get(metric)) for r in rows]
    return all(v is None or -1.0 <= v <= 1.0 for v in vals)


def emit_results(rows: Sequence[dict], out_dir) -> Dict[str, Path]:
    """Write results.csv, results.json and summary.txt; returns their paths."""
    if not rows:
        raise ValueError("no result rows to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in RESULT_COLUMNS])
        paths = {"csv": out / "results.csv", "json": out / "results.json", "summary": out / "summary.txt"}
        paths["csv"].write_text(buf.getvalue())
        clean = [{c: _clean(r.get(c)) for c in RESULT_COLUMNS} for r in rows]
        paths["json"].write_text(json.dumps(clean, indent=2) + "\n")
        paths["summary"].write_text(summary_table(rows))
    except OSError as e:
        raise DataError(f"cannot write results to {out}: {e}")
    return paths


def read_results_csv(path) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -- plots -------------------------------------------------------------------------

PLOT_METRICS = ("acc", "auc", "ap", "nmi", "ari")
PALETTE = ("#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860")


def _svg_chart(title: str, methods: List[str], series: Dict[str, Dict[str, tuple]], strategies: List[str]) -> str:
    width, height = 120 + 90 * len(methods) * max(1, len(strategies)) // 2 + 60, 320
    left, right, top, bottom = 60, 20, 40, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    ymax = max((m + s for st in series.values() for (m, s) in st.values()), default=1.0)
    ymax = ymax if ymax > 0 else 1.0
    scale = plot_h / ymax
    group_w = plot_w / max(len(methods), 1)
    bar_w = group_w * 0.8 / max(len(strategies), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>{escape(title)}</title>',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
             f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>']
    for i in range(5):
        v = ymax * i / 4
        y = top + plot_h - v * scale
        parts.append(f'<text x="{left - 5}" y="{y + 4:.2f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for gi, method in enumerate(methods):
        gx = left + gi * group_w + group_w * 0.1
        for si, strat in enumerate(strategies):
            if method not in series.get(strat, {}):
                continue
            mean, std = series[strat][method]
            x = gx + si * bar_w
            # negative means (ARI) hang below the axis
            h = abs(mean) * scale
            y = top + plot_h - max(mean, 0.0) * scale
            color = PALETTE[si % len(PALETTE)]
            parts.append(f'<rect class="bar" data-method="{escape(method)}" data-strategy="{escape(strat)}" '
                         f'data-mean="{mean!r}" data-std="{std!r}" x="{x:.4f}" y="{y:.4f}" '
                         f'width="{bar_w * 0.9:.4f}" height="{h:.4f}" fill="{color}"/>')
            cx = x + bar_w * 0.45
            y_lo, y_hi = top + plot_h - (mean - std) * scale, top + plot_h - (mean + std) * scale
            parts.append(f'<line class="whisker" x1="{cx:.4f}" y1="{y_lo:.4f}" x2="{cx:.4f}" y2="{y_hi:.4f}" '
                         f'stroke="black"/>')
        parts.append(f'<text x="{left + gi * group_w + group_w / 2:.1f}" y="{top + plot_h + 15}" '
                     f'text-anchor="middle" font-size="11">{escape(method)}</text>')
    for si, strat in enumerate(strategies):
        parts.append(f'<rect x="{left + 10 + 90 * si}" y="{height - 25}" width="10" height="10" '
                     f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{left + 24 + 90 * si}" y="{height - 16}" font-size="10">{escape(strat)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(rows: Sequence[dict], out_dir) -> List[Path]:
    """One grouped bar chart per (dataset, metric): methods on x, one bar per strategy."""
    if not rows:
        raise ValueError("no result rows to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for dataset in sorted({r["dataset"] for r in rows}):
        sub = [r for r in rows if r["dataset"] == dataset]
        for metric in PLOT_METRICS:
            series: Dict[str, Dict[str, tuple]] = {}
            for e in summarize(sub):
                if e[metric] is not None:
                    series.setdefault(e["strategy"], {})[e["method"]] = e[metric]
            if not series:
                continue
            methods = [m for m in METHODS if any(m in s for s in series.values())]
            methods += sorted({m for s in series.values() for m in s} - set(methods))
            svg = _svg_chart(f"{dataset}: {metric}", methods, series, sorted(series))
            p = out / f"{_safe(dataset)}_{metric}.svg"
            p.write_text(svg)
            written.append(p)
    return written


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)
