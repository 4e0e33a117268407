import json
import shutil
from datetime import date
from pathlib import Path

import pandas as pd
import pytest

import validate_outputs
from helpers import day_lines
from src import __version__
from src.artifacts import MANIFEST_NAME, verify_manifest
from src.cli import build_parser, main

ROOT = Path(__file__).resolve().parent.parent
SAMPLE = ROOT / "data" / "eurusd_sample.csv"
CONFIGS = ROOT / "configs"
SMALL_TRAIN = {"learning_rate": 0.01, "batch_size": 64, "max_epochs": 2, "patience": 1}
SMALL_CONFIG = {
    "pairs": ["SYN0", "SYN1"],
    "seed": 5,
    "synth": {
        "generator": "multi_pair_coupled",
        "days": 30,
        "params": {"loadings": [1.0, 0.7], "phi": 0.5, "psi": 0.3, "level": 5e-4, "scale": 5e-5, "price0": 1.3},
    },
    "models": [
        {"name": "AR", "family": "AR", "ar_orders": [1, 2]},
        {"name": "TrainMean", "family": "TrainMean"},
        {"name": "LSTM_t", "family": "LSTM_t", "hidden": 2, "p_t": 3, "p_d": 2, "sample_stride": 50,
         "train": SMALL_TRAIN},
        {"name": "p-Pairs", "family": "PPairsTwoLSTM", "hidden": 2, "p_t": 3, "p_d": 2, "head_width": 4,
         "sample_stride": 50, "train": SMALL_TRAIN},
    ],
    "grids": {"lags": [2, 3], "ar_orders": [1, 2]},
    "analysis": {"max_intraday_lag": 10, "max_interday_lag": 3, "interday_minute": 600, "cross_lags": [0, 1]},
    "sensitivity": {"model": "p-Pairs", "lags": [2, 3]},
}


def _config(tmp_path, obj, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def _run(command, config, out, *extra):
    return main([command, "--config", config, "--out", str(out), "--log", "WARNING", *extra])


def _error(capsys):
    # the JSON error object is the last stderr line
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth through report on the small config; returns the output directory."""
    root = tmp_path_factory.mktemp("pipeline")
    config = _config(root, SMALL_CONFIG)
    out = root / "out"
    for command in ("synth", "ingest", "profile", "acf", "crosscorr", "train", "evaluate", "dmtest", "report"):
        assert _run(command, config, out) == 0, command
    return out


# -----------------------------
# Parser
# -----------------------------
def test_parser_knows_every_command():
    parser = build_parser()
    args = parser.parse_args(["dmtest", "--harvey", "--pair", "A", "--pair", "B", "--seed", "3"])
    assert (args.command, args.harvey, args.pair, args.seed) == ("dmtest", True, ["A", "B"], 3)
    assert parser.parse_args(["report"]).scale == 1e-8


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    assert main(["forecast"]) == 1
    err = _error(capsys)
    assert err["error"] == "UsageError"
    assert err["exit_code"] == 1


# -----------------------------
# Error exits
# -----------------------------
def test_profile_before_ingest_is_missing_artifact(tmp_path, capsys):
    config = _config(tmp_path, SMALL_CONFIG)
    assert _run("profile", config, tmp_path / "out") == 1
    assert _error(capsys)["error"] == "MissingArtifact"


def test_undeclared_pair_is_config_error(tmp_path, capsys):
    config = _config(tmp_path, SMALL_CONFIG)
    assert _run("ingest", config, tmp_path / "out", "--pair", "ZZZ") == 1
    assert _error(capsys)["error"] == "ConfigError"


def test_empty_input_is_data_error(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("", encoding="utf-8")
    config = _config(tmp_path, {"pairs": {"EURUSD": "empty.csv"}})
    assert _run("ingest", config, tmp_path / "out") == 2
    assert _error(capsys)["error"] == "EmptyData"


def test_constant_panel_is_numerical_error(tmp_path, capsys):
    (tmp_path / "flat.csv").write_text("\n".join(day_lines(date(2019, 1, 7))) + "\n", encoding="utf-8")
    config = _config(tmp_path, {"pairs": {"EURUSD": "flat.csv"}})
    out = tmp_path / "out"
    assert _run("ingest", config, out) == 0
    assert _run("acf", config, out) == 3
    assert _error(capsys)["error"] == "DegenerateSeries"


def test_evaluate_without_checkpoints(tmp_path, capsys):
    config = _config(tmp_path, SMALL_CONFIG)
    out = tmp_path / "out"
    assert _run("synth", config, out) == 0
    assert _run("ingest", config, out) == 0
    assert _run("evaluate", config, out) == 1
    assert "train" in _error(capsys)["message"]


# -----------------------------
# Ingest of real-format bars
# -----------------------------
def test_ingest_sample_file(tmp_path):
    config = _config(tmp_path, {"pairs": {"EURUSD": str(SAMPLE)}, "min_coverage": 0.001})
    out = tmp_path / "out"
    assert _run("ingest", config, out) == 0
    summary = json.loads((out / "ingest" / "summary.json").read_text())
    assert summary["EURUSD"]["days"] == 2
    assert summary["EURUSD"]["first_day"] == "2018-01-01"
    assert summary["EURUSD"]["last_day"] == "2019-12-31"
    verify_manifest(out / "ingest")


def test_synth_is_reproducible(tmp_path):
    config = _config(tmp_path, SMALL_CONFIG)
    for out in ("a", "b"):
        assert _run("synth", config, tmp_path / out, "--days", "3") == 0
    for name in ("SYN0.csv", "SYN1.csv", "synth_spec.json", MANIFEST_NAME):
        assert (tmp_path / "a" / "synth" / name).read_bytes() == (tmp_path / "b" / "synth" / name).read_bytes()


def test_synth_series_generator(tmp_path):
    config = _config(tmp_path, SMALL_CONFIG)
    assert _run("synth", config, tmp_path / "out", "--spec", "garch") == 0
    series = pd.read_csv(tmp_path / "out" / "synth" / "series.csv")
    assert list(series.columns) == ["t", "value", "sigma2"]


# -----------------------------
# Full pipeline
# -----------------------------
def test_pipeline_manifests(pipeline):
    for command in ("synth", "ingest", "profile", "acf", "crosscorr", "train", "evaluate", "dmtest", "report"):
        manifest = verify_manifest(pipeline / command)
        assert manifest["seed"] == 5


def test_pipeline_ingest_and_analysis(pipeline):
    summary = json.loads((pipeline / "ingest" / "summary.json").read_text())
    assert {p: s["days"] for p, s in summary.items()} == {"SYN0": 30, "SYN1": 30}
    profiles = pd.read_csv(pipeline / "profile" / "profiles.csv")
    assert set(profiles["group"]) >= {"all", "Monday", "Friday"}
    acf = pd.read_csv(pipeline / "acf" / "acf.csv")
    assert set(acf["group"]) == {"SYN0/intraday", "SYN0/interday@600", "SYN1/intraday", "SYN1/interday@600"}
    lag0 = pd.read_csv(pipeline / "crosscorr" / "crosscorr_lag0.csv", index_col=0)
    assert lag0.loc["SYN0", "SYN0"] == 1.0
    assert lag0.loc["SYN0", "SYN1"] > 0.3


def test_pipeline_training_outputs(pipeline):
    splits = json.loads((pipeline / "train" / "splits.json").read_text())
    assert [s["fold"] for s in splits] == [0, 1, 2]
    for name in ("AR", "TrainMean", "LSTM_t", "p-Pairs"):
        for fold in range(3):
            assert (pipeline / "train" / "checkpoints" / name / f"fold{fold}.json").is_file()
    history = pd.read_csv(pipeline / "train" / "histories" / "p-Pairs_fold0.csv")
    assert set(history["group"]) == {"SYN0+SYN1"}
    assert list(history.columns) == ["group", "epoch", "train_loss", "val_loss"]


def test_pipeline_evaluation(pipeline):
    summary = json.loads((pipeline / "evaluate" / "mse_summary.json").read_text())
    assert summary["models"] == ["AR", "TrainMean", "LSTM_t", "p-Pairs"]
    for model in summary["models"]:
        for pair in ("SYN0", "SYN1"):
            assert len(summary["summary"][model][pair]["fold_mse"]) == 3
    errors = pd.read_csv(pipeline / "evaluate" / "errors" / "AR.csv")
    assert list(errors.columns) == ["fold", "pair", "day", "minute", "target", "prediction", "squared_error"]
    problems, _ = validate_outputs.run_checks(pipeline)
    assert problems == []


def test_pipeline_dm_and_report(pipeline):
    matrix = pd.read_csv(pipeline / "dmtest" / "dm_matrix.csv")
    assert len(matrix) == 2 * 6  # C(4, 2) model pairs for each currency pair
    assert (pipeline / "dmtest" / "dm_SYN0.csv").is_file()
    report = json.loads((pipeline / "report" / "report.json").read_text())
    assert report["validation_problems"] == []
    assert report["percent_reduction_vs"] == "AR"
    assert set(report["percent_reduction"]) == {"TrainMean", "LSTM_t", "p-Pairs"}
    table = pd.read_csv(pipeline / "report" / "mse_table.csv", index_col=0)
    assert list(table.index) == ["AR", "TrainMean", "LSTM_t", "p-Pairs"]
    assert "±" in table.loc["AR", "SYN0"]


def test_report_detects_tampering(pipeline, tmp_path, capsys):
    copy = tmp_path / "copy"
    shutil.copytree(pipeline, copy)
    target = copy / "profile" / "spikes.json"
    target.write_text(target.read_text() + " ", encoding="utf-8")
    assert _run("report", _config(tmp_path, SMALL_CONFIG), copy) == 2
    assert _error(capsys)["error"] == "ManifestMismatch"


@pytest.mark.slow
def test_tune_and_sensitivity(pipeline, tmp_path):
    config = _config(tmp_path, SMALL_CONFIG)
    assert _run("tune", config, pipeline) == 0
    tuning = json.loads((pipeline / "tune" / "tuning.json").read_text())
    assert set(tuning) == {"AR", "LSTM_t", "p-Pairs"}
    assert tuning["AR"]["cell"]["ar_order"] in (1, 2)
    hp = pd.read_csv(pipeline / "tune" / "hp_LSTM_t.csv", index_col=0)
    assert list(hp.columns) == ["2", "3"]
    assert _run("sensitivity", config, pipeline) == 0
    curve = pd.read_csv(pipeline / "sensitivity" / "sensitivity.csv")
    assert sorted(set(curve["lag"])) == [2, 3]
    assert ((curve["normalized"] >= 0) & (curve["normalized"] <= 1)).all()


@pytest.mark.slow
def test_jobs_do_not_change_outputs(tmp_path):
    config = _config(tmp_path, SMALL_CONFIG)
    runs = {}
    for jobs in ("1", "2"):
        out = tmp_path / f"jobs{jobs}"
        for command in ("synth", "ingest", "train", "evaluate", "dmtest"):
            assert _run(command, config, out, "--jobs", jobs) == 0, command
        runs[jobs] = out
    files = sorted(p.relative_to(runs["1"]) for p in runs["1"].rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(runs["2"]) for p in runs["2"].rglob("*") if p.is_file())
    for rel in files:
        a, b = runs["1"] / rel, runs["2"] / rel
        if rel.name == MANIFEST_NAME:
            # inputs are recorded by absolute path and the config carries the job count
            assert json.loads(a.read_text())["outputs"] == json.loads(b.read_text())["outputs"]
        else:
            assert a.read_bytes() == b.read_bytes(), str(rel)


@pytest.mark.slow
def test_acceptance_model_ordering(tmp_path):
    acceptance = json.loads((CONFIGS / "acceptance_60d.json").read_text(encoding="utf-8"))
    wanted = {"PlainDNN", "LSTM_t", "LSTM_D", "2-LSTM", "4-Pairs"}
    acceptance["models"] = [m for m in acceptance["models"] if m["name"] in wanted]
    config = _config(tmp_path, acceptance)
    out = tmp_path / "out"
    for command in ("synth", "ingest", "train", "evaluate"):
        assert _run(command, config, out) == 0, command
    summary = json.loads((out / "evaluate" / "mse_summary.json").read_text())["summary"]
    mse = {name: sum(s["mean"] for s in pairs.values()) / len(pairs) for name, pairs in summary.items()}
    assert set(mse) == wanted
    assert mse["2-LSTM"] <= mse["LSTM_D"]
    assert mse["LSTM_t"] <= mse["PlainDNN"]
    assert mse["4-Pairs"] <= 1.10 * mse["2-LSTM"]
