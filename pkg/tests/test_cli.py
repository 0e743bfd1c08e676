import json

import numpy as np
import pytest

from jsdmp import autodiff as ad
from jsdmp.cli import ablation_table, main
from jsdmp.data import edge_homophily, load_dataset

FAST = ["--epochs", "20", "--train-per-class", "10", "--val-size", "60", "--test-size", "100"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "easy"
    args = ["synth", "--out", str(out), "--n", "300", "--classes", "3", "--features", "30"]
    assert main(args + ["--homophily", "0.9", "--avg-degree", "6", "--seed", "1"]) == 0
    return out


def test_synth_writes_loadable_directory(synth_dir, capsys, tmp_path):
    ds = load_dataset(synth_dir)
    assert (ds.n, ds.n_features, ds.n_classes) == (300, 30, 3)
    assert not ds.has_splits
    out = tmp_path / "split"
    assert main(["synth", "--out", str(out), "--n", "400", "--split", "planetoid", "--gzip"]) == 0
    printed = capsys.readouterr().out
    ds = load_dataset(out)
    assert ds.has_splits and ds.train_mask.sum() == 100 and ds.test_mask.sum() == 200
    assert (out / "splits.tsv.gz").exists()
    assert f"homophily={edge_homophily(ds.graph, ds.labels):.4f}" in printed


def test_train_then_eval_reproduces_report(synth_dir, tmp_path, capsys):
    report, ckpt = tmp_path / "r.json", tmp_path / "m.ckpt"
    code = main(["train", "--dataset", str(synth_dir), "--model", "dmpprg", "--seed", "2", "--out", str(report)]
                + FAST + ["--checkpoint", str(ckpt)])
    assert code == 0
    r = json.loads(report.read_text())
    text = (tmp_path / "r.json.txt").read_text().splitlines()
    assert f"test_acc\t{r['test_acc']!r}" in text
    assert f"test_acc={r['test_acc']}" in capsys.readouterr().out
    assert main(["eval", "--dataset", str(synth_dir), "--checkpoint", str(ckpt)]) == 0
    assert capsys.readouterr().out.strip() == f"split=test acc={r['test_acc']} nmi={r['test_nmi']}"
    assert main(["eval", "--dataset", str(synth_dir), "--checkpoint", str(ckpt), "--split", "val"]) == 0
    assert f"acc={r['best_val_acc']}" in capsys.readouterr().out


def test_train_is_deterministic(synth_dir, tmp_path):
    reports = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        assert main(["train", "--dataset", str(synth_dir), "--seed", "5", "--out", str(path)] + FAST) == 0
        d = json.loads(path.read_text())
        d.pop("wall_seconds")
        reports.append(d)
    assert reports[0] == reports[1]


def test_corrupted_checkpoint_fails_eval(synth_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--dataset", str(synth_dir), "--model", "gcn", "--checkpoint", str(ckpt)] + FAST) == 0
    blob = bytearray(ckpt.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    ckpt.write_bytes(bytes(blob))
    capsys.readouterr()
    assert main(["eval", "--dataset", str(synth_dir), "--checkpoint", str(ckpt)]) == 1
    assert "error[E_CHECKPOINT]" in capsys.readouterr().err


def test_eval_rejects_incompatible_dataset(synth_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--dataset", str(synth_dir), "--checkpoint", str(ckpt)] + FAST) == 0
    other = tmp_path / "other"
    assert main(["synth", "--out", str(other), "--n", "300", "--classes", "3", "--features", "31"]) == 0
    capsys.readouterr()
    assert main(["eval", "--dataset", str(other), "--checkpoint", str(ckpt)]) == 1
    assert "error[" in capsys.readouterr().err


def test_usage_errors_exit_2(synth_dir, capsys):
    assert main(["train", "--dataset", str(synth_dir), "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["train", "--dataset", str(synth_dir), "--model", "mlp"]) == 2
    assert main(["train", "--dataset", str(synth_dir), "--epochs", "0"]) == 2
    assert "error[E_CONFIG]" in capsys.readouterr().err
    assert main(["ablate", "--dataset", str(synth_dir), "--seeds", "0"]) == 2
    assert main(["gradcheck", "--size", "1"]) == 2


def test_missing_dataset_exits_1(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "nothing")]) == 1
    assert "error[E_LOAD]" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--size", "5", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("ok:")
    names = {line.split("\t")[1] for line in out.splitlines() if "\t" in line}
    assert {"X_base", "layer0.W_f", "layer0.a", "lambda", "mlp.W1", "prop.gamma"} <= names


def test_gradcheck_catches_broken_backward(monkeypatch, capsys):
    def bad_relu(x):
        xv = x.values
        return ad._result("relu", np.maximum(xv, 0.0), (x,), lambda g: (-g * (xv > 0),))

    monkeypatch.setattr(ad, "relu", bad_relu)
    assert main(["gradcheck", "--size", "5", "--seed", "0"]) == 1
    err = capsys.readouterr().err
    assert "error[E_GRADCHECK]" in err and "layer0.W_f" in err


def test_ablate_writes_table(synth_dir, tmp_path, capsys):
    table = tmp_path / "ablation.tsv"
    assert main(["ablate", "--dataset", str(synth_dir), "--seeds", "2", "--out", str(table)] + FAST) == 0
    lines = table.read_text().splitlines()
    assert lines[0] == "mode\tmean_acc\tstd_acc\truns"
    assert [line.split("\t")[0] for line in lines[1:]] == ["full", "context_only", "structure_only", "none"]
    assert all(line.endswith("\t2") for line in lines[1:])
    assert capsys.readouterr().out.endswith(table.read_text())


def test_ablation_table_aggregates():
    rows = [("full", 0, 0.5), ("full", 1, 0.7), ("none", 0, 0.4)]
    assert ablation_table(rows) == "mode\tmean_acc\tstd_acc\truns\nfull\t0.600000\t0.100000\t2\nnone\t0.400000\t0.000000\t1\n"
