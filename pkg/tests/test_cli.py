import csv
import json

import numpy as np
import pytest

from agnn.cli import SWEEP_HEADER, main


@pytest.fixture(scope="module")
def sbm_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("sbm")
    assert main(["gen-sbm", "--n", "120", "--classes", "3", "--p-in", "0.2", "--p-out", "0.02",
                 "--m", "8", "--seed", "1", "--out", str(out)]) == 0
    return out


def data_args(d):
    return ["--edges", str(d / "edges.tsv"), "--features", str(d / "features.tsv"),
            "--labels", str(d / "labels.txt"), "--per-class", "10", "--valid", "30", "--test", "60"]


def test_gen_then_train(sbm_files, tmp_path, capsys):
    rc = main(["train", *data_args(sbm_files), "--layers", "4", "--epochs", "20", "--hidden", "16",
               "--out", str(tmp_path / "run")])
    assert rc == 0
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert {"test_acc", "val_acc", "layers", "seed"} <= set(metrics)
    assert metrics["layers"] == 4
    rows = list(csv.DictReader((tmp_path / "run" / "history.csv").open()))
    assert len(rows) == 20
    assert all(np.isfinite(float(r["loss"])) for r in rows)
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["test_acc"] == metrics["test_acc"]


def test_train_is_byte_deterministic(sbm_files, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["train", *data_args(sbm_files), "--layers", "4", "--epochs", "15", "--hidden", "8",
                     "--seed", "3", "--out", str(d)]) == 0
        outs.append((d / "metrics.json").read_bytes())
    assert outs[0] == outs[1]


def test_env_seed_overrides(sbm_files, tmp_path, monkeypatch):
    monkeypatch.setenv("AGNN_SEED", "7")
    assert main(["train", *data_args(sbm_files), "--epochs", "2", "--hidden", "4", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["seed"] == 7


def test_eval_reproduces_metrics(sbm_files, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", *data_args(sbm_files), "--layers", "2", "--epochs", "10", "--hidden", "8",
                 "--out", str(run)]) == 0
    capsys.readouterr()
    assert main(["eval", "--model-dir", str(run)]) == 0
    result = json.loads(capsys.readouterr().out)
    metrics = json.loads((run / "metrics.json").read_text())
    assert result["test_acc"] == metrics["test_acc"]
    assert result["valid_acc"] == metrics["val_acc"]


def test_gcn_flag(sbm_files, tmp_path):
    assert main(["train", *data_args(sbm_files), "--gcn", "--layers", "3", "--epochs", "5", "--hidden", "8",
                 "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["model"] == "gcn" and metrics["classifier_weights"] is None


def test_config_file(sbm_files, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_epochs": 3, "hidden": 4, "lam": 0.5}))
    assert main(["train", *data_args(sbm_files), "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    saved = json.loads((tmp_path / "r" / "config.json").read_text())
    assert saved["lam"] == 0.5 and saved["theta1"] == 0.02
    assert json.loads((tmp_path / "r" / "metrics.json").read_text())["epochs"] == 3


def test_split_file(sbm_files, tmp_path):
    split = {"train": list(range(0, 120, 4)), "valid": [1, 5, 9], "test": [2, 6, 10, 14]}
    (tmp_path / "split.json").write_text(json.dumps(split))
    args = data_args(sbm_files) + ["--split", str(tmp_path / "split.json")]
    assert main(["train", *args, "--epochs", "2", "--hidden", "4", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "split.json").read_text()) == split


def test_sweep(sbm_files, tmp_path):
    rc = main(["sweep", *data_args(sbm_files), "--layers-list", "2,8", "--with-gcn-baseline",
               "--seeds", "0,1", "--epochs", "5", "--hidden", "8", "--out", str(tmp_path)])
    assert rc == 0
    with (tmp_path / "sweep.csv").open() as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == SWEEP_HEADER
        rows = list(reader)
    assert len(rows) == 8
    for model in ("agnn", "gcn"):
        for seed in ("0", "1"):
            assert sorted(r["layers"] for r in rows if r["model"] == model and r["seed"] == seed) == ["2", "8"]
    assert all(np.isfinite(float(r[k])) for r in rows for k in ("train_acc", "val_acc", "test_acc", "mad_final"))


def test_oracle_command(tmp_path):
    assert main(["oracle", "--instances", "3", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "oracle.json").read_text())
    assert report["all_pass"] and all(c["pass"] for c in report["checks"])
    assert {"check", "seed", "metric", "pass"} <= set(report["checks"][0])


def test_usage_errors(capsys):
    assert main(["train", "--bogus"]) == 1
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path, capsys):
    rc = main(["train", "--edges", str(tmp_path / "nope"), "--features", "x", "--labels", "y",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "data error" in capsys.readouterr().err


def test_odd_agnn_layers_rejected(sbm_files, tmp_path):
    assert main(["sweep", *data_args(sbm_files), "--layers-list", "3", "--out", str(tmp_path)]) == 1


def test_bad_data_exit_code(tmp_path):
    (tmp_path / "e").write_text("0\t5\n")
    (tmp_path / "f").write_text("2\t1\n0.1\n0.2\n")
    (tmp_path / "l").write_text("0\n1\n")
    rc = main(["train", "--edges", str(tmp_path / "e"), "--features", str(tmp_path / "f"),
               "--labels", str(tmp_path / "l"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_oracle_theta_override(tmp_path, capsys):
    assert main(["oracle", "--instances", "2", "--theta", "0.5", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "oracle.json").read_text())["all_pass"]
    assert main(["oracle", "--theta", "-1"]) == 1
