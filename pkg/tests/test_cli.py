import numpy as np
import pytest

from dasel import kvconfig
from dasel.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--preset", "small", "--out", str(root / "raw")]) == EXIT_OK
    assert main(["prepare", "--raw", str(root / "raw"), "--out", str(root / "prep")]) == EXIT_OK
    assert main(["train", "--frames", str(root / "prep"), "--seeds", "7", "--epochs", "2",
                 "--jobs", "1", "--out", str(root / "models")]) == EXIT_OK
    return root


def test_simulate_outputs(workspace):
    raw = workspace / "raw"
    assert len(list(raw.glob("ble_*.csv"))) == 2
    man = kvconfig.read_kv(raw / "manifest.txt")
    assert man["command"] == "simulate" and man["seed"] == "7"
    assert "manifest.output.labels.csv" in man


def test_prepare_outputs(workspace):
    prep = workspace / "prep"
    for name in ("frames.csv", "stats.csv", "labeled.csv", "report.json", "manifest.txt"):
        assert (prep / name).is_file()


def test_single_seed_gives_one_archive(workspace):
    assert [p.name for p in (workspace / "models").glob("*.dsl")] == ["model_seed7.dsl"]
    man = kvconfig.read_kv(workspace / "models" / "manifest.txt")
    assert "manifest.final_loss.7" in man and man["epochs"] == "2"


def test_manifest_rerun_identical(workspace):
    out = workspace / "models2"
    cfg = workspace / "models" / "manifest.txt"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    a = (workspace / "models" / "model_seed7.dsl").read_bytes()
    assert (out / "model_seed7.dsl").read_bytes() == a


def test_predict_and_evaluate(workspace, capsys):
    pred = workspace / "pred" / "p.csv"
    assert main(["predict", "--frames", str(workspace / "prep"), "--models", str(workspace / "models"),
                 "--out", str(pred), "--jobs", "1"]) == EXIT_OK
    assert (workspace / "pred" / "p.manifest.txt").is_file()
    pred2 = workspace / "pred" / "p2.csv"
    assert main(["predict", "--frames", str(workspace / "prep"), "--models", str(workspace / "models"),
                 "--out", str(pred2), "--jobs", "2"]) == EXIT_OK
    assert pred.read_bytes() == pred2.read_bytes()
    assert main(["predict", "--frames", str(workspace / "prep"), "--models", str(workspace / "models"),
                 "--out", str(workspace / "pred" / "raw.csv"), "--directions", "backward_10",
                 "--no-smoothing"]) == EXIT_OK
    capsys.readouterr()
    assert main(["evaluate", "--truth", str(workspace / "prep"), "--predictions", str(pred),
                 "--out", str(workspace / "eval")]) == EXIT_OK
    assert "macro F1" in capsys.readouterr().out
    lines = (workspace / "eval" / "scores.csv").read_text().splitlines()
    assert lines[0] == "class,f1" and lines[-1].startswith("macro,")


def test_evaluate_cv(workspace):
    out = workspace / "cv"
    assert main(["evaluate", "--cv", str(workspace / "prep"), "--pipeline", "baseline,dasel",
                 "--seeds", "3", "--epochs", "1", "--baseline-epochs", "2", "--jobs", "1",
                 "--out", str(out)]) == EXIT_OK
    res = (out / "results.csv").read_text().splitlines()
    assert res[0] == "approach,fold1,fold2,mean,std" and len(res) == 3
    assert len((out / "folds.csv").read_text().splitlines()) == 3
    assert (out / "predictions_dasel_fold1.csv").is_file()


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--models", "2", "--coords", "30", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "gradcheck.csv").is_file()
    assert main(["gradcheck", "--models", "1", "--coords", "30", "--tolerance", "1e-30"]) == EXIT_NUMERICAL


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
    assert main(["train", "--frames", str(tmp_path)]) == EXIT_USAGE  # no --out
    assert main(["train", "--epochs", "x"]) == EXIT_USAGE
    cfg = tmp_path / "c.cfg"
    kvconfig.write_kv(cfg, {"command": "predict"})
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["evaluate", "--cv", str(tmp_path), "--pipeline", "magic", "--out", str(tmp_path)]) == EXIT_USAGE


def test_data_errors(tmp_path, workspace):
    assert main(["prepare", "--raw", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["predict", "--frames", str(workspace / "prep"), "--models", str(tmp_path),
                 "--out", str(tmp_path / "p.csv")]) == EXIT_DATA
    bad = tmp_path / "m"
    bad.mkdir()
    (bad / "x.dsl").write_bytes(b"junk")
    assert main(["predict", "--frames", str(workspace / "prep"), "--models", str(bad),
                 "--out", str(tmp_path / "p.csv")]) == EXIT_DATA
    assert main(["train", "--frames", str(workspace / "prep"), "--days", "1999-01-01",
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
