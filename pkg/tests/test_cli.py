import numpy as np
import pytest

from mlmg.harness.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from mlmg.labels import (
    FeatureMatrix,
    ObservedLabelMatrix,
    load_features,
    load_labels,
    save_features,
    save_labels,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--n", "120", "--m", "12", "--d", "4",
                 "--seed", "2"]) == EXIT_OK
    return out


def _data_args(d):
    return ["--features", str(d / "features.txt"), "--labels", str(d / "labels.txt"),
            "--truth", str(d / "truth.txt"), "--hierarchy", str(d / "hierarchy.txt"),
            "--vocab", str(d / "vocab.txt")]


def test_synth_writes_files(dataset):
    for name in ("features", "labels", "truth", "hierarchy", "vocab"):
        assert (dataset / f"{name}.txt").exists()


def test_run_is_byte_identical(dataset, tmp_path):
    args = ["run", *_data_args(dataset), "--seed", "1,2", "--variant", "co+constraint"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == EXIT_OK
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.startswith(b"row_type,seed,metric,value\n")


def test_run_jsonl_to_stdout(dataset, capsys):
    assert main(["run", *_data_args(dataset), "--format", "jsonl"]) == EXIT_OK
    assert capsys.readouterr().out.count('"row_type": "mean"') == 6


def test_simulate_solve_evaluate(dataset, tmp_path, capsys):
    obs, hidden = tmp_path / "obs.txt", tmp_path / "hidden.txt"
    assert main(["simulate", *_data_args(dataset), "--tau", "0.5", "--seed", "3",
                 "--out", str(obs), "--hidden", str(hidden)]) == EXIT_OK
    y = load_labels(obs)
    assert y.missing().any()
    assert len(hidden.read_text().splitlines()) == int(y.missing()[:, y.training_mask].sum())

    args = [a if a != str(dataset / "labels.txt") else str(obs) for a in _data_args(dataset)]
    scores, trace = tmp_path / "z.txt", tmp_path / "trace.csv"
    assert main(["solve", *args, "--variant", "sl", "--out", str(scores),
                 "--trace", str(trace)]) == EXIT_OK
    z = load_features(scores).data
    assert z.shape == y.shape and z.min() >= 0 and z.max() <= 1
    assert trace.read_text().startswith("iteration,")

    capsys.readouterr()
    assert main(["evaluate", *args, "--scores", str(scores)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "mean,,ap," in out


def test_grid_subcommand(dataset, tmp_path, capsys):
    cfg = tmp_path / "grid.cfg"
    cfg.write_text("grid.beta = 0.1, 1\ngrid.gamma = 0\nexperiment.ks = 5\n")
    table = tmp_path / "table.txt"
    assert main(["grid", "--config", str(cfg), *_data_args(dataset),
                 "--table", str(table), "--out", str(tmp_path / "r.csv")]) == EXIT_OK
    assert len(table.read_text().splitlines()) == 3
    assert "best.beta = " in capsys.readouterr().out


def test_oracle_check(capsys):
    assert main(["oracle-check", "--count", "3", "--seed", "1"]) == EXIT_OK
    assert "status = pass" in capsys.readouterr().out
    assert main(["oracle-check", "--count", "3", "--seed", "1", "--tol", "0"]) == EXIT_AUDIT


def test_config_errors_exit_2(dataset, tmp_path):
    assert main(["run", *_data_args(dataset), "--tau", "1.5"]) == EXIT_CONFIG
    assert main(["run", "--features", str(tmp_path / "none.txt"),
                 "--labels", str(tmp_path / "none.txt")]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["run", *_data_args(dataset), "--variant", "svm"]) == EXIT_CONFIG


def test_infeasible_exit_3(tmp_path):
    save_features(tmp_path / "x.txt", FeatureMatrix(np.random.default_rng(0).random((2, 30))))
    save_labels(tmp_path / "y.txt", ObservedLabelMatrix(np.zeros((2, 30), dtype=np.int8)))
    args = ["--features", str(tmp_path / "x.txt"), "--labels", str(tmp_path / "y.txt"),
            "--variant", "sl"]
    assert main(["run", *args, "--out", str(tmp_path / "r.csv")]) == EXIT_INFEASIBLE
    assert main(["solve", *args, "--out", str(tmp_path / "z.txt")]) == EXIT_INFEASIBLE


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
