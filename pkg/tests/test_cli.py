import csv
import json

import pytest

from dppsnn.cli import main
from dppsnn.serialization import read_params, read_trains

CHEAP = """D = 3
n_observable = 1
horizon = 10
n_train = 3
n_test = 2
n_param_settings = 1
train_sizes = 2
n_variance_estimates = 4
bench_amplitudes = 1,2
epochs = 2
compensator_samples = 10
eval_samples = 2
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "c.cfg").write_text(CHEAP)
    return tmp_path


def read_csv(path):
    raw = path.read_bytes()
    assert b"\r" not in raw
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_is_deterministic(workdir, capsys):
    assert main(["generate", "--config", "c.cfg", "--out", "a"]) == 0
    assert main(["generate", "--config", "c.cfg", "--out", "b"]) == 0
    for name in ("train.jsonl", "test.jsonl", "full_train.jsonl", "truth.json"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()
    assert len(read_trains(workdir / "a" / "train.jsonl", 3)) == 3
    assert len(read_trains(workdir / "a" / "test.jsonl", 3)) == 2
    assert main(["generate", "--config", "c.cfg", "--out", "c", "--seed", "1"]) == 0
    assert (workdir / "a" / "train.jsonl").read_bytes() != (workdir / "c" / "train.jsonl").read_bytes()
    first = capsys.readouterr().out.splitlines()[0]
    assert json.loads(first)["config"]["D"] == 3


def test_observed_files_hide_hidden_neurons(workdir):
    main(["generate", "--config", "c.cfg"])
    for tr in read_trains(workdir / "data" / "train.jsonl", 3):
        assert not tr.mark_values()[:, 1:].any()


def test_train_eval_and_resume(workdir, capsys):
    main(["generate", "--config", "c.cfg"])
    assert main(["train", "--config", "c.cfg", "--data", "data"]) == 0
    rows = read_csv(workdir / "run" / "trace.csv")
    assert list(rows[0]) == ["epoch", "temperature", "mean_train_elbo", "seconds"] and len(rows) == 2
    manifest = json.loads((workdir / "run" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["epoch_elbo"]) == 2
    assert main(["eval", "--config", "c.cfg", "--data", "data", "--params", "run/params.json",
                 "--out", "eval.csv"]) == 0
    out1 = capsys.readouterr().out
    assert main(["eval", "--config", "c.cfg", "--data", "data", "--params", "run/params.json"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == out1.splitlines()[-1]
    assert list(read_csv(workdir / "eval.csv")[0]) == ["n_examples", "mean_elbo"]
    assert main(["train", "--config", "c.cfg", "--data", "data", "--init", "run/params.json",
                 "--out", "run2", "--epochs", "1", "--estimator", "pathwise"]) == 0
    assert read_params(workdir / "run2" / "phi.json").dim == 3


def test_missing_data_is_usage_error(workdir, capsys):
    assert main(["train", "--config", "c.cfg"]) == 2
    assert main(["eval", "--config", "c.cfg", "--params", "p.json"]) == 2
    assert "--data" in capsys.readouterr().err


def test_bad_input_is_reported(workdir, capsys):
    (workdir / "bad.jsonl").write_text("{}\n")
    assert main(["train", "--config", "c.cfg", "--data", "bad.jsonl"]) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err
    (workdir / "bad.cfg").write_text("D = 3\nL = 5\n")
    assert main(["generate", "--config", "bad.cfg"]) == 1


def test_grad_variance_output(workdir):
    assert main(["grad-variance", "--config", "c.cfg"]) == 0
    rows = read_csv(workdir / "grad_variance.csv")
    assert [r["estimator"] for r in rows] == ["score", "pathwise"]
    assert all(float(r["mean_std"]) >= 0.0 for r in rows)
    assert main(["grad-variance", "--config", "c.cfg", "--out", "one.csv", "--seed", "3"]) == 0


def test_grad_variance_single_estimate_has_zero_spread(workdir):
    (workdir / "one.cfg").write_text(CHEAP.replace("n_variance_estimates = 4", "n_variance_estimates = 1"))
    assert main(["grad-variance", "--config", "one.cfg", "--out", "g1.csv"]) == 0
    assert all(float(r["mean_std"]) == 0.0 for r in read_csv(workdir / "g1.csv"))


def test_bench_rows(workdir):
    assert main(["bench", "--config", "c.cfg"]) == 0
    rows = read_csv(workdir / "bench.csv")
    assert list(rows[0]) == ["amplitude", "method", "seconds_per_epoch"]
    assert len(rows) == 4
    assert {(r["amplitude"], r["method"]) for r in rows} == {(a, m) for a in ("1.0", "2.0")
                                                             for m in ("score", "pathwise")}
    assert all(float(r["seconds_per_epoch"]) > 0.0 for r in rows)


def test_predictive_rows(workdir, capsys):
    assert main(["predictive", "--config", "c.cfg"]) == 0
    rows = read_csv(workdir / "predictive.csv")
    assert list(rows[0]) == ["setting", "n_train", "estimator", "test_elbo", "final_train_elbo"]
    assert sorted(r["estimator"] for r in rows) == ["pathwise", "score"]
    assert "mean test ELBO" in capsys.readouterr().out
