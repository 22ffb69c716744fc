import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dpmix.cli import main, read_config_file
from dpmix.errors import ConfigError

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def separable(tmp_path):
    """Two tight clusters plus four far rows; ids f0..f3 are the outliers."""
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.5, (60, 2))
    b = rng.normal(6.0, 0.5, (60, 2))
    far = np.array([[30.0, -30.0], [-25.0, 20.0], [40.0, 40.0], [-30.0, -35.0]])
    rows = [[f"n{i}", *(repr(float(v)) for v in x)] for i, x in enumerate(np.vstack([a, b]))]
    rows[50:50] = [[f"f{i}", *(repr(float(v)) for v in x)] for i, x in enumerate(far)]
    _write_csv(tmp_path / "data.csv", ["id", "x0", "x1"], rows)
    (tmp_path / "schema.txt").write_text("x0:real\nx1:real\nid:id\n")
    _write_csv(tmp_path / "labels.csv", ["id", "label"], [[r[0], int(r[0].startswith("f"))] for r in rows])
    return tmp_path


def _train(d, *extra):
    return main(["train", "--data", str(d / "data.csv"), "--schema", str(d / "schema.txt"),
                 "--model", str(d / "model.json"), *extra])


def test_train_writes_model_and_trace(separable):
    assert _train(separable) == 0
    doc = json.loads((separable / "model.json").read_text())
    assert doc["format"] == "dpmm-model/1"
    trace = _read_csv(separable / "model.elbo.csv")
    assert trace[0]["iteration"] == "1" and len(trace) >= 2
    elbo = np.array([float(r["elbo"]) for r in trace])
    assert np.all(np.diff(elbo) >= -1e-8 * np.abs(elbo[1:]))


def test_missing_schema_exit_2(separable, capsys):
    rc = main(["train", "--data", str(separable / "data.csv"), "--schema", str(separable / "nope.txt"),
               "--model", str(separable / "m.json")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_rerun_elbo_byte_identical(separable):
    assert _train(separable, "--seed", "3", "--elbo-out", str(separable / "a.csv")) == 0
    assert _train(separable, "--seed", "3", "--elbo-out", str(separable / "b.csv")) == 0
    assert (separable / "a.csv").read_bytes() == (separable / "b.csv").read_bytes()


@pytest.mark.parametrize("exact", [False, True])
def test_outliers_take_top_ranks(separable, exact):
    assert _train(separable) == 0
    args = ["score", "--model", str(separable / "model.json"), "--data", str(separable / "data.csv"),
            "--out", str(separable / "scores.csv")]
    assert main(args + (["--exact"] if exact else [])) == 0
    rows = _read_csv(separable / "scores.csv")
    assert [r["id"] for r in rows[48:56]] == ["n48", "n49", "f0", "f1", "f2", "f3", "n50", "n51"]
    top = {r["id"] for r in rows if int(r["rank"]) <= 4}
    assert top == {"f0", "f1", "f2", "f3"}


def test_exact_rejects_categorical(tmp_path, capsys):
    rng = np.random.default_rng(1)
    rows = [[i, repr(float(rng.normal())), "ab"[i % 2]] for i in range(40)]
    _write_csv(tmp_path / "data.csv", ["id", "x", "c"], rows)
    (tmp_path / "schema.txt").write_text("x:real\nc:categorical:a|b\nid:id\n")
    assert _train(tmp_path, "-K", "3") == 0
    rc = main(["score", "--exact", "--model", str(tmp_path / "model.json"), "--data", str(tmp_path / "data.csv"),
               "--out", str(tmp_path / "s.csv")])
    assert rc == 2
    assert "error" in capsys.readouterr().err
    rc = main(["score", "--model", str(tmp_path / "model.json"), "--data", str(tmp_path / "data.csv"),
               "--out", str(tmp_path / "s.csv")])
    assert rc == 0


def test_empty_test_file_exit_2(separable):
    assert _train(separable) == 0
    (separable / "empty.csv").write_text("")
    (separable / "header.csv").write_text("id,x0,x1\n")
    for name in ("empty.csv", "header.csv"):
        rc = main(["score", "--model", str(separable / "model.json"), "--data", str(separable / name),
                   "--out", str(separable / "s.csv")])
        assert rc == 2


def test_score_schema_mismatch_exit_2(separable):
    assert _train(separable) == 0
    _write_csv(separable / "other.csv", ["id", "y0"], [["a", "1.0"]])
    rc = main(["score", "--model", str(separable / "model.json"), "--data", str(separable / "other.csv"),
               "--out", str(separable / "s.csv")])
    assert rc == 2


def test_evaluate_perfect_scores(tmp_path, capsys):
    _write_csv(tmp_path / "s.csv", ["id", "score", "rank"], [["a", "9.0", 1], ["b", "1.0", 2], ["c", "0.5", 3]])
    _write_csv(tmp_path / "l.csv", ["id", "label"], [["c", 0], ["a", 1], ["b", 0]])
    rc = main(["evaluate", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "average_precision 1.000000" in out and "roc_auc 1.000000" in out


@pytest.mark.parametrize("label_ids", [["a", "b", "x"], ["a", "b"], ["a", "b", "c", "d"]])
def test_evaluate_mismatched_ids(tmp_path, label_ids):
    _write_csv(tmp_path / "s.csv", ["id", "score"], [["a", "3"], ["b", "2"], ["c", "1"]])
    _write_csv(tmp_path / "l.csv", ["id", "label"], [[i, int(i == "a")] for i in label_ids])
    assert main(["evaluate", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv")]) == 2


def test_golden_fixture(tmp_path):
    out = tmp_path / "metrics.json"
    rc = main(["evaluate", "--scores", os.path.join(FIXTURES, "golden_scores.csv"),
               "--labels", os.path.join(FIXTURES, "golden_labels.csv"), "--out", str(out),
               "--pr-out", str(tmp_path / "pr.csv"), "--roc-out", str(tmp_path / "roc.csv")])
    assert rc == 0
    got = json.loads(out.read_text())
    with open(os.path.join(FIXTURES, "golden_metrics.json")) as fh:
        want = json.load(fh)
    assert got["n_samples"] == want["n_samples"] and got["n_positive"] == want["n_positive"]
    assert got["average_precision"] == pytest.approx(want["average_precision"], rel=1e-12)
    assert got["roc_auc"] == pytest.approx(want["roc_auc"], rel=1e-12)
    roc = _read_csv(tmp_path / "roc.csv")
    assert roc[0]["threshold"] == "inf" and float(roc[-1]["tpr"]) == 1.0


def test_config_file_overridden_by_flags(separable):
    (separable / "run.cfg").write_text("# training options\nK = 4\nmax-iters=3\nseed=1\n")
    assert _train(separable, "--config", str(separable / "run.cfg"), "--max-iters", "5") == 0
    doc = json.loads((separable / "model.json").read_text())
    assert doc["config"]["K"] == 4 and doc["config"]["max_iters"] == 5 and doc["config"]["seed"] == 1


def test_config_file_errors(tmp_path, separable):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    bad.write_text("K=four\n")
    assert _train(separable, "--config", str(bad)) == 2
    (tmp_path / "gen.cfg").write_text("outlier_fraction=0.1\n")
    assert _train(separable, "--config", str(tmp_path / "gen.cfg")) == 2


def test_gen_split_and_pipeline(tmp_path, capsys):
    d = tmp_path / "g"
    assert main(["gen", "--out-dir", str(d), "--n-samples", "300", "--n-features", "3",
                 "--test-fraction", "0.2", "--seed", "4"]) == 0
    assert sorted(os.listdir(d)) == ["schema.txt", "test.csv", "test_labels.csv", "train.csv", "train_labels.csv"]
    test_labels = _read_csv(d / "test_labels.csv")
    assert len(test_labels) == 60 and sum(int(r["label"]) for r in test_labels) == 3
    assert main(["train", "--data", str(d / "train.csv"), "--schema", str(d / "schema.txt"),
                 "--model", str(d / "m.json"), "--seed", "4"]) == 0
    assert main(["score", "--model", str(d / "m.json"), "--data", str(d / "test.csv"),
                 "--out", str(d / "s.csv")]) == 0
    assert main(["evaluate", "--scores", str(d / "s.csv"), "--labels", str(d / "test_labels.csv")]) == 0
    assert "average_precision" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dpmix", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "dpmix" in proc.stdout
