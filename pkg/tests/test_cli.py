import json
import time

import pytest

from gind.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, build_config, main, read_config_file
from gind.data import ChainsSpec, gen_chains, save_dataset
from gind.training import evaluate, load_params


def _records(out):
    return [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]


def test_precedence_cli_over_file_over_defaults(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\nalpha = 0.3\nmax_iter = 70  # inline\nlengths = 10, 20\n")
    cfg = build_config("chains", read_config_file(conf), {"alpha": "0.6"})
    assert cfg["alpha"] == 0.6
    assert cfg["max_iter"] == 70
    assert cfg["lengths"] == (10, 20)
    assert cfg["lr"] == 0.01
    assert build_config("train", {}, {"dataset": "x"})["alpha"] == 0.8


@pytest.mark.parametrize("override", [{"trials": "0"}, {"repeats": "0"}, {"alpha": "2"},
                                      {"nonsense": "1"}, {"lr": "abc"}, {"reg": "l1"},
                                      {"lengths": "1"}, {"warm_start": "maybe"}])
def test_invalid_values_are_config_errors(override, tmp_path):
    argv = ["chains", "--out", str(tmp_path)]
    for k, v in override.items():
        argv += [f"--{k}", v]
    assert main(argv) == EXIT_CONFIG


def test_missing_config_file(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "none.conf")]) == EXIT_CONFIG
    assert "none.conf" in capsys.readouterr().err


def test_verify_default_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    recs = _records(tmp_path)
    assert recs and all(r["passed"] for r in recs)
    assert "checks passed" in (tmp_path / "summary.txt").read_text()


def test_verify_violated_cap(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--k_caps", "1.5", "--trials", "3",
                 "--sizes", "8x3"]) == EXIT_CHECK_FAILED
    recs = _records(tmp_path)
    assert {r["status"] for r in recs} == {"hypothesis-failed"}


def test_chains_smoke_ladder(tmp_path):
    start = time.perf_counter()
    assert main(["chains", "--out", str(tmp_path), "--lengths", "10,20", "--repeats", "2"]) == EXIT_OK
    assert time.perf_counter() - start < 60
    recs = _records(tmp_path)
    assert [(r["length"], r["seed"]) for r in recs] == [(10, 0), (10, 1), (20, 0), (20, 1)]
    assert {"length", "seed", "test_acc", "epochs", "seconds"} <= recs[0].keys()
    summary = (tmp_path / "summary.txt").read_text().splitlines()
    assert summary[0].split() == ["length", "mean", "std", "runs"]
    mean10 = sum(r["test_acc"] for r in recs if r["length"] == 10) / 2
    assert mean10 == 1.0


def test_chains_records_repeat_for_identical_seeds(tmp_path):
    args = ["chains", "--lengths", "4", "--repeats", "2", "--epochs", "5", "--num_chains", "6",
            "--feature_dim", "4", "--hidden", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    strip = lambda rs: [{k: v for k, v in r.items() if k != "seconds"} for r in rs]
    assert strip(_records(tmp_path / "a")) == strip(_records(tmp_path / "b"))


@pytest.fixture
def chains_dir(tmp_path):
    ds = gen_chains(ChainsSpec(num_chains=8, chain_length=5, feature_dim=5, seed=1))
    return ds, save_dataset(ds, tmp_path / "ds")


def test_train_then_eval_reproduces_accuracy(tmp_path, chains_dir, capsys):
    ds, path = chains_dir
    out = tmp_path / "run"
    common = ["--dataset", str(path), "--out", str(out), "--hidden", "4", "--alpha", "0.3"]
    assert main(["train", "--epochs", "10"] + common) == EXIT_OK
    assert len(_records(out)) == 10
    summary = (out / "summary.txt").read_text()
    capsys.readouterr()
    assert main(["eval"] + common) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    assert f"test_acc {rec['accuracy']!r}" in summary
    from gind.cli import build_config as bc
    from gind.graph import orient
    cfg = bc("eval", {}, {"dataset": str(path), "alpha": "0.3"})
    direct = evaluate(load_params(out / "params.txt"), orient(ds.graph, 0), cfg.solver(), ds, "test")
    assert direct["accuracy"] == rec["accuracy"]


def test_eval_shape_mismatch_and_missing_dataset(tmp_path, chains_dir, capsys):
    _, path = chains_dir
    out = tmp_path / "run"
    assert main(["train", "--epochs", "1", "--dataset", str(path), "--out", str(out)]) == EXIT_OK
    other = save_dataset(gen_chains(ChainsSpec(num_chains=8, chain_length=5, feature_dim=7)), tmp_path / "o")
    capsys.readouterr()
    assert main(["eval", "--dataset", str(other), "--params", str(out / "params.txt")]) == EXIT_CONFIG
    assert "features" in capsys.readouterr().err
    assert main(["eval", "--dataset", str(tmp_path / "absent")]) == EXIT_CONFIG
    assert "absent" in capsys.readouterr().err
