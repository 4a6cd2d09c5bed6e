import csv
import json
from pathlib import Path

import pytest

from graphfm.cli import main

TRAIN_FLAGS = ["--method", "gbt", "--strategy", "full", "--seeds", "0,1", "--max-epochs", "3",
               "--set", "method.emb_dim=8", "--set", "probe.hidden=8,", "--set", "probe.epochs=30",
               "--set", "link.decode_channels_lp=8", "--set", "link.epochs=20", "--set", "experiment.eval_every=1",
               "--set", "experiment.cluster_restarts=2"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "sbm"
    assert main(["gen-data", "--blocks", "2", "--nodes-per-block", "40", "--p-in", "0.2", "--p-out", "0.02",
                 "--feat-dim", "4", "--seed", "3", "--out", str(out)]) == 0
    return out


def numeric_fields(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: v for k, v in r.items() if k not in ("dataset", "method", "strategy", "criterion")} for r in rows]


def test_gen_data_writes_meta(dataset):
    meta = json.loads((dataset / "meta.json").read_text())
    assert meta["num_nodes"] == 80 and meta["num_classes"] == 2 and meta["feat_dim"] == 4


def test_train_writes_run_directory_and_is_deterministic(dataset, tmp_path, capsys):
    assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path / "a")] + TRAIN_FLAGS) == 0
    assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path / "b")] + TRAIN_FLAGS) == 0
    out = capsys.readouterr().out
    assert "gbt" in out and "±" in out
    (run_a,) = (tmp_path / "a" / "runs").iterdir()
    for name in ("manifest.json", "config.ini", "results.csv", "results.json", "summary.txt",
                 "ckpt_seed0.bin", "ckpt_seed1.bin"):
        assert (run_a / name).exists(), name
    assert list((run_a / "plots").glob("*.svg"))
    a, b = numeric_fields(tmp_path / "a" / "results.csv"), numeric_fields(tmp_path / "b" / "results.csv")
    assert a == b and len(a) == 2 and all(r["throughput_it_s"] == "" for r in a)


def test_eval_reproduces_recorded_metrics(dataset, tmp_path):
    assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path)] + TRAIN_FLAGS) == 0
    (run,) = (tmp_path / "runs").iterdir()
    recorded = numeric_fields(run / "results.csv")[1]
    assert main(["eval", "--checkpoint", str(run / "ckpt_seed1.bin"), "--out", str(tmp_path / "ev")]) == 0
    again = numeric_fields(tmp_path / "ev" / "results.csv")[0]
    for k in ("seed", "acc", "auc", "ap", "nmi", "ari"):
        assert again[k] == recorded[k], k


def test_profile_flag_records_throughput(dataset, tmp_path):
    flags = [f for f in TRAIN_FLAGS]
    flags[flags.index("0,1")] = "0"
    assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path), "--profile"] + flags) == 0
    assert float(numeric_fields(tmp_path / "results.csv")[0]["throughput_it_s"]) > 0


def test_bench(dataset, tmp_path, capsys):
    assert main(["bench", "--dataset", str(dataset), "--method", "gbt", "--strategy", "full,subgraph",
                 "--iterations", "2", "--set", "method.emb_dim=8", "--set", "sampler.num_clusters=4",
                 "--set", "sampler.clusters_per_batch=1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [r["strategy"] for r in rows] == ["full", "subgraph"]
    assert float(rows[1]["act_mem_mb"]) < float(rows[0]["act_mem_mb"])


def test_sweep(dataset, tmp_path):
    flags = TRAIN_FLAGS[:TRAIN_FLAGS.index("--seeds")] + ["--seeds", "0", "--max-epochs", "2"] + TRAIN_FLAGS[8:]
    assert main(["sweep", "--dataset", str(dataset), "--budget", "2", "--seed", "1", "--out", str(tmp_path)]
                + flags) == 0
    (run,) = (tmp_path / "runs").iterdir()
    lines = (run / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("trial,")


@pytest.mark.parametrize("argv, code", [
    (["train", "--dataset", "/nonexistent/dir"], 3),
    (["train"], 2),
    (["train", "--dataset", "x", "--set", "experiment.criterion=f1"], 2),
    (["train", "--dataset", "x", "--set", "bogus"], 2),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_argparse_rejects_bad_choice():
    with pytest.raises(SystemExit) as e:
        main(["train", "--criterion", "f1"])
    assert e.value.code == 2


def test_eval_without_config(tmp_path, dataset):
    ck = tmp_path / "lonely_seed0.bin"
    ck.write_bytes(b"GFMC")
    assert main(["eval", "--checkpoint", str(ck), "--dataset", str(dataset), "--out", str(tmp_path)]) == 2
