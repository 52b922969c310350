import json
import shutil
import subprocess
import sys

import pytest

from glam.cli import build_parser, main
from glam.data import load_dataset, save_dataset
from glam.graphs import knn_graph, perfect_knn, write_edges
from glam.model import load_checkpoint

FAST = ["--k", "5", "--hidden-a", "16", "--hidden-c", "16", "--epochs", "20", "--patience", "5"]


@pytest.fixture(scope="module")
def ds_dir(tmp_path_factory, small):
    path = tmp_path_factory.mktemp("data") / "small"
    save_dataset(small, path)
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def test_train_writes_outputs(ds_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert _run("train", "--dataset", ds_dir, "--out", out, "--seeds", "0,1", *FAST) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1] and len(summary["test_accuracies"]) == 2
    for seed in (0, 1):
        report = json.loads((out / f"report_seed{seed}.json").read_text())
        assert report["hyperparams"]["seed"] == seed
        assert (out / f"curve_seed{seed}.csv").read_text().startswith("epoch,")
        _, hp = load_checkpoint(out / f"checkpoint_seed{seed}.json")
        assert hp.seed == seed
    assert "0" in json.loads((out / "timing.json").read_text())["wall_clock_seconds"]
    assert "test accuracy" in capsys.readouterr().out


def test_train_single_epoch(ds_dir, tmp_path):
    out = tmp_path / "run"
    assert _run("train", "--dataset", ds_dir, "--out", out, *FAST, "--epochs", "1") == 0
    report = json.loads((out / "report_seed0.json").read_text())
    assert len(report["records"]) == 1


def test_train_gcn_model(ds_dir, tmp_path):
    out = tmp_path / "run"
    assert _run("train", "--dataset", ds_dir, "--out", out, "--model", "gcn-knn", *FAST) == 0
    hp = json.loads((out / "resolved_config.json").read_text())["hyperparams"]
    assert hp["use_affinity"] is False and hp["crop"] is False


def test_outputs_byte_identical_across_runs(ds_dir, tmp_path):
    for name in ("a", "b"):
        assert _run("train", "--dataset", ds_dir, "--out", tmp_path / name, "--seeds", "3", *FAST) == 0
    for name in ("report_seed3.json", "curve_seed3.csv", "checkpoint_seed3.json", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_missing_dataset_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope"
    assert _run("train", "--dataset", missing, "--out", tmp_path / "o") == 1
    assert str(missing) in capsys.readouterr().err


def test_malformed_dataset_exit_code(ds_dir, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(ds_dir, bad)
    with open(bad / "labels.tsv", "a") as fh:
        fh.write("0 zzz\n")
    assert _run("train", "--dataset", bad, "--out", tmp_path / "o", *FAST) == 1
    assert "labels.tsv:" in capsys.readouterr().err


def test_invalid_hyperparameter_exit_code(ds_dir, tmp_path, capsys):
    assert _run("train", "--dataset", ds_dir, "--out", tmp_path / "o", "--w-ck", "1.5") == 1
    assert "w_ck" in capsys.readouterr().err


def test_unknown_flag_exit_code(ds_dir):
    with pytest.raises(SystemExit) as err:
        _run("train", "--dataset", ds_dir, "--bogus")
    assert err.value.code == 1


def test_config_precedence(ds_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 0.05, "hidden_c": 8, "k": 5}))
    out = tmp_path / "run"
    assert _run("train", "--dataset", ds_dir, "--out", out, "--config", cfg, "--epochs", "2",
                "--hidden-a", "16", "--lr", "0.02") == 0
    hp = json.loads((out / "resolved_config.json").read_text())["hyperparams"]
    assert hp["lr"] == 0.02  # flag beats config
    assert hp["hidden_c"] == 8  # config beats default
    assert hp["beta"] == 1.0  # default


def test_config_unknown_key(ds_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.05}))
    assert _run("train", "--dataset", ds_dir, "--out", tmp_path / "o", "--config", cfg) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_sweep_budget_one_and_best_config_reuse(ds_dir, tmp_path):
    out = tmp_path / "sweep"
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"ranges": {"lr": ["log", 0.001, 0.1]}, "budget": 5, "seed": 2}))
    assert _run("sweep", "--dataset", ds_dir, "--out", out, "--spec", spec, "--budget", "1", *FAST) == 0
    board = json.loads((out / "leaderboard.json").read_text())
    assert len(board) == 1
    assert json.loads((out / "resolved_config.json").read_text())["sweep_spec"]["budget"] == 1
    assert _run("train", "--dataset", ds_dir, "--out", tmp_path / "t", "--config", out / "best_config.json") == 0


def test_ablate_three_rows(ds_dir, tmp_path):
    out = tmp_path / "abl"
    assert _run("ablate", "--dataset", ds_dir, "--out", out, "--seeds", "0", *FAST) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["glam", "w/o affinity graph", "w/o affinity loss"]
    assert len((out / "ablation.csv").read_text().splitlines()) == 4


def test_graph_metrics_on_perfect_edges(ds_dir, small, tmp_path):
    edges = tmp_path / "edges.tsv"
    write_edges(perfect_knn(knn_graph(small.features, 5), small.labels), edges)
    out = tmp_path / "gm"
    assert _run("analyze", "graph-metrics", "--dataset", ds_dir, "--edges", edges, "--out", out) == 0
    metrics = json.loads((out / "graph_metrics.json").read_text())
    assert metrics["homophily"] == 100.0
    assert metrics["weighted_homophily"] == 100.0
    assert metrics["bad_neighbor_ratio"] == 0.0


def test_graph_metrics_from_checkpoint(ds_dir, tmp_path):
    run = tmp_path / "run"
    assert _run("train", "--dataset", ds_dir, "--out", run, *FAST, "--epochs", "3") == 0
    out = tmp_path / "gm"
    assert _run("analyze", "graph-metrics", "--dataset", ds_dir, "--checkpoint", run / "checkpoint_seed0.json",
                "--exclude-self-loops", "--out", out) == 0
    metrics = json.loads((out / "graph_metrics.json").read_text())
    assert 0.0 <= metrics["bad_neighbor_ratio"] <= 100.0


def test_noise_curve_rows(ds_dir, tmp_path):
    out = tmp_path / "noise"
    assert _run("analyze", "noise-curve", "--dataset", ds_dir, "--mode", "add", "--fractions", "0,0.1,0.2,0.4",
                "--seeds", "0", "--out", out, *FAST) == 0
    lines = (out / "noise_add.csv").read_text().splitlines()
    assert len(lines) == 5
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.0, 0.1, 0.2, 0.4]


def test_weight_sweep_rows(ds_dir, tmp_path):
    out = tmp_path / "ws"
    assert _run("analyze", "weight-sweep", "--dataset", ds_dir, "--weights", "0,0.5", "--seeds", "0",
                "--out", out, *FAST) == 0
    assert len(json.loads((out / "weight_sweep.json").read_text())) == 2


def test_make_split(ds_dir, tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    for path in (a, b):
        assert _run("make-split", "--dataset", ds_dir, "--per-class", "5", "--val", "30", "--test", "50",
                    "--seed", "7", "--out", path) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert sum(line.endswith("train") for line in lines) == 15


def test_make_split_small_class(ds_dir, tmp_path, capsys):
    assert _run("make-split", "--dataset", ds_dir, "--per-class", "500", "--val", "10", "--test", "10", "--out", tmp_path / "s.tsv") == 1
    assert "class" in capsys.readouterr().err


def test_made_split_loads(ds_dir, tmp_path):
    d = tmp_path / "copy"
    shutil.copytree(ds_dir, d)
    assert _run("make-split", "--dataset", d, "--per-class", "5", "--val", "30", "--test", "50") == 0
    assert load_dataset(d).split.train.size == 15


@pytest.mark.parametrize(
    "argv",
    [[], ["train"], ["sweep"], ["ablate"], ["analyze"], ["analyze", "graph-metrics"], ["analyze", "noise-curve"],
     ["analyze", "weight-sweep"], ["make-split"]],
)
def test_help(argv, capsys):
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args([*argv, "--help"])
    assert err.value.code == 0
    assert "usage: glam" in capsys.readouterr().out


def test_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "glam.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "make-split" in proc.stdout


def test_sweep_gcn_model(ds_dir, tmp_path):
    out = tmp_path / "sweep"
    assert _run("sweep", "--dataset", ds_dir, "--out", out, "--budget", "1", "--model", "gcn-knn", *FAST) == 0
    spec = json.loads((out / "resolved_config.json").read_text())["sweep_spec"]
    assert "w_ck" not in spec["ranges"]
    assert json.loads((out / "best_config.json").read_text())["hyperparams"]["use_affinity"] is False
