import json
from pathlib import Path

import numpy as np
import pytest

from src.artifacts import (
    MANIFEST_NAME,
    read_csv,
    read_json,
    read_manifest,
    safe_name,
    verify_manifest,
    write_json,
    write_manifest,
    write_text,
)
from src.config import ENV_OUTPUT_DIR, RunConfig, load_config, make_rng, resolve_output_dir
from src.errors import (
    ConfigError,
    ConvergenceFailure,
    EmptyData,
    ManifestMismatch,
    MissingArtifact,
    SpecError,
)
from src.model_zoo import ModelSpec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="run.json"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -----------------------------
# Seeding
# -----------------------------
def test_make_rng_streams():
    a = make_rng(7, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7, 1, 2).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 2, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 1, 2).standard_normal(5))


def test_make_rng_known_outputs():
    # the vectors documented in README.md; a port must reproduce them bit for bit
    raw = make_rng(2019).bit_generator.random_raw(4).tolist()
    assert raw == [2869844860756045645, 13049155409024366832, 4418437650847454287, 3057211278233491495]
    assert make_rng(2019, 1).random(2).tolist() == [0.012870632210393196, 0.013656294686008708]


# -----------------------------
# Config loading
# -----------------------------
def test_default_config():
    cfg = load_config(None)
    assert cfg.seed == 0
    assert cfg.splits.k == 3
    assert cfg.grids.lags == (5, 10, 20, 30)


@pytest.mark.parametrize("name", ["synthetic_30d.json", "acceptance_60d.json"])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert len(cfg.pair_ids) >= 2
    specs = [ModelSpec.from_dict(m) for m in cfg.models]
    assert len({s.name for s in specs}) == len(specs)
    assert cfg.sensitivity.model in {s.name for s in specs}


def test_acceptance_config_setup():
    cfg = load_config(CONFIGS / "acceptance_60d.json")
    params = cfg.synth.params
    assert (cfg.seed, cfg.synth.days, cfg.splits.k) == (2019, 60, 3)
    assert cfg.pair_ids == ["SYN0", "SYN1", "SYN2", "SYN3"]
    assert (params["phi"], params["psi"], params["loadings"]) == (0.5, 0.3, [1.0, 0.9, 0.6, 0.4])
    neural = [ModelSpec.from_dict(m) for m in cfg.models if m["family"] not in {"AR", "GARCH", "TrainMean"}]
    assert all(s.hidden == 16 and s.train.max_epochs <= 30 for s in neural if s.family.uses_lags)


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="Duplicate key 'seed'"):
        load_config(_write(tmp_path, '{"seed": 1, "seed": 2}'))


@pytest.mark.parametrize(
    "text",
    [
        '{"sede": 1}',
        '{"splits": {"folds": 3}}',
        '{"grids": {"lags": 5}}',
        '{"seed": -1}',
        '{"jobs": 0}',
        '{"format": "parquet"}',
        '{"min_coverage": 1.5}',
        '{"models": [{"family": "AR"}, {"family": "AR"}]}',
        '{"models": "AR"}',
        "[1, 2]",
        "{not json",
    ],
)
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_pair_paths_resolve_against_config_dir(tmp_path):
    cfg = load_config(_write(tmp_path, json.dumps({"pairs": {"EURUSD": "data/eur.csv", "SYN": None}})))
    assert cfg.pairs["EURUSD"] == str((tmp_path / "data" / "eur.csv").resolve())
    assert cfg.pairs["SYN"] is None
    assert load_config(_write(tmp_path, '{"pairs": ["A", "B"]}', "list.json")).pair_ids == ["A", "B"]


def test_override_ignores_unset_flags():
    cfg = RunConfig(seed=3)
    assert cfg.override(seed=None, jobs=None) is cfg
    assert cfg.override(seed=11).seed == 11
    with pytest.raises(ConfigError):
        cfg.override(jobs=0)


def test_output_dir_precedence(monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT_DIR, "from_env")
    assert resolve_output_dir("flag", RunConfig(output_dir="cfg")) == Path("flag")
    assert resolve_output_dir(None, RunConfig(output_dir="cfg")) == Path("cfg")
    assert resolve_output_dir(None, RunConfig()) == Path("from_env")
    monkeypatch.delenv(ENV_OUTPUT_DIR)
    assert resolve_output_dir(None, RunConfig()) == Path("outputs")


# -----------------------------
# Artifacts
# -----------------------------
def test_safe_name():
    assert safe_name("2-LSTM") == "2-LSTM"
    assert safe_name("p-Pairs@p=5") == "p-Pairs_p_5"
    assert safe_name("a/b c") == "a_b_c"


def test_json_is_strict(tmp_path):
    path = write_json(tmp_path / "sub" / "x.json", {"a": float("nan"), "b": [1.0, float("inf")], "c": np.arange(2)})
    assert read_json(path) == {"a": None, "b": [1.0, None], "c": [0, 1]}


def test_missing_artifacts(tmp_path):
    with pytest.raises(MissingArtifact):
        read_json(tmp_path / "absent.json")
    with pytest.raises(MissingArtifact):
        read_csv(tmp_path / "absent.csv")
    with pytest.raises(MissingArtifact):
        read_manifest(tmp_path)


def test_manifest_round_trip(tmp_path):
    source = write_text(tmp_path / "in.csv", "a,b\n1,2\n")
    out_dir = tmp_path / "profile"
    output = write_text(out_dir / "profiles.csv", "x\n1\n")
    write_manifest(out_dir, "profile", 7, {"seed": 7}, [source], [output])
    manifest = verify_manifest(out_dir)
    assert manifest["command"] == "profile"
    assert list(manifest["outputs"]) == ["profiles.csv"]
    # identical inputs give a byte-identical manifest
    first = (out_dir / MANIFEST_NAME).read_bytes()
    write_manifest(out_dir, "profile", 7, {"seed": 7}, [source], [output])
    assert (out_dir / MANIFEST_NAME).read_bytes() == first


def test_manifest_detects_changes(tmp_path):
    out_dir = tmp_path / "acf"
    output = write_text(out_dir / "acf.csv", "lag,value\n0,1\n")
    write_manifest(out_dir, "acf", 0, {}, [], [output])
    output.write_text("lag,value\n0,2\n", encoding="utf-8")
    with pytest.raises(ManifestMismatch, match="output changed: acf.csv"):
        verify_manifest(out_dir)
    output.unlink()
    with pytest.raises(ManifestMismatch, match="output missing"):
        verify_manifest(out_dir)


# -----------------------------
# Errors
# -----------------------------
def test_exit_codes():
    assert SpecError("x").exit_code == 1
    assert MissingArtifact("x").exit_code == 1
    assert EmptyData("x").exit_code == 2
    assert ConvergenceFailure("x").exit_code == 3
    assert EmptyData("no bars").to_dict() == {"error": "EmptyData", "message": "no bars", "exit_code": 2}
