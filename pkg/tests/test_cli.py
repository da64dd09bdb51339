from pathlib import Path

from typer.testing import CliRunner

from esa.cli import app
from esa.config import Config
from esa.harness import read_csv

runner = CliRunner()
EXPERIMENT_CFG = str(Path(__file__).parent / "experiment.cfg")


def invoke(*args):
    return runner.invoke(app, list(args), catch_exceptions=False)


def test_cli_writes_records(tmp_path):
    out = tmp_path / "gauss.csv"
    result = invoke("gauss-seq", "--config", EXPERIMENT_CFG, "--out", str(out))
    assert result.exit_code == 0, result.stdout
    records = read_csv(out)
    assert {r.method for r in records} == {"oracle", "esa", "fa", "ms"}
    assert {r.replicate for r in records if r.method == "esa"} == {0, 1}

    saved = Config.from_disk(out.with_suffix(".cfg"))["gauss-seq"]
    assert saved["n"] == 256
    assert saved["seed"] == 7
    assert saved["upsilon"]["@psi_penalty"] == "zero"


def test_cli_overrides(tmp_path):
    out = tmp_path / "knn.csv"
    result = invoke(
        "knn",
        "-c",
        EXPERIMENT_CFG,
        "--method",
        "esa,ms",
        "--replicates=2",
        "--out",
        str(out),
    )
    assert result.exit_code == 0, result.stdout
    records = read_csv(out)
    assert {r.method for r in records} == {"esa", "ms", "cv"}
    saved = Config.from_disk(out.with_suffix(".cfg"))["knn"]
    assert saved["criterion"]["kind"] == "val"
    assert saved["criterion"]["split_fraction"] == 0.25


def test_cli_without_config(tmp_path):
    out = tmp_path / "gmm.csv"
    result = invoke(
        "gmm",
        "--n",
        "60",
        "--k-max",
        "2",
        "--restarts",
        "1",
        "--no-timing",
        "--out",
        str(out),
    )
    assert result.exit_code == 0, result.stdout
    assert all(r.wall_time_ms == 0.0 for r in read_csv(out))


def test_saved_config_replays_the_run(tmp_path):
    first = tmp_path / "first.csv"
    invoke("gauss-seq", "-c", EXPERIMENT_CFG, "--out", str(first))
    replay = tmp_path / "replay.csv"
    result = invoke(
        "gauss-seq", "-c", str(first.with_suffix(".cfg")), "--out", str(replay)
    )
    assert result.exit_code == 0, result.stdout
    assert first.read_bytes() == replay.read_bytes()


def test_cli_is_deterministic(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        invoke("knn", "-c", EXPERIMENT_CFG, "--out", str(path))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_cli_validation_errors(tmp_path):
    out = str(tmp_path / "out.csv")
    result = invoke("gauss-seq", "--lam", "-1", "--out", out)
    assert result.exit_code == 1
    result = invoke("gauss-seq", "--unknown-key", "1", "--out", out)
    assert result.exit_code == 1
    result = invoke("knn", "--criterion", "bic", "--out", out)
    assert result.exit_code == 1
    result = invoke("gauss-seq", "--method", "[esa", "--out", out)
    assert result.exit_code == 1
    result = invoke("gauss-seq", "stray", "--out", out)
    assert result.exit_code == 1
    assert not (tmp_path / "out.csv").exists()


def test_cli_missing_config(tmp_path):
    result = invoke("gauss-seq", "-c", str(tmp_path / "missing.cfg"))
    assert result.exit_code == 2


def test_cli_runtime_error(tmp_path):
    # the cross-validation folds are smaller than the largest neighbor count
    result = invoke(
        "knn",
        "--n",
        "100",
        "--ladder",
        "3,80",
        "--no-timing",
        "--out",
        str(tmp_path / "out.csv"),
    )
    assert result.exit_code == 2
    assert not (tmp_path / "out.csv").exists()
