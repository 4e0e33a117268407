"""
config.py: run configuration and seeding.

A run is described by one JSON file. Values resolve as
CLI flags > config file > environment (.env via python-dotenv) > defaults.
All randomness in the pipeline comes from ``make_rng`` streams keyed by the
config seed, so nothing depends on wall-clock or platform entropy. The generator
is Philox4x64-10; README.md lists reference outputs.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from dotenv import load_dotenv

from src.errors import ConfigError
from src.schema_config import DEFAULT_MIN_COVERAGE, FORMATS, MINUTES_PER_DAY

load_dotenv()

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "RANGECAST_OUT"
DEFAULT_OUTPUT_DIR = "outputs"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for the stream (seed, *keys); same keys, same numbers on every platform."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *(int(k) for k in keys)])))


# -----------------------------
# Sections
# -----------------------------
@dataclass(frozen=True)
class SplitConfig:
    k: int = 3
    ratios: tuple[float, float, float] = (0.6, 0.3, 0.1)


@dataclass(frozen=True)
class GridConfig:
    dnn_layers: tuple[int, ...] = (2, 4, 6, 8, 10)
    dnn_widths: tuple[int, ...] = (5, 10, 20, 30)
    lags: tuple[int, ...] = (5, 10, 20, 30)
    ar_orders: tuple[int, ...] = tuple(range(1, 11))


@dataclass(frozen=True)
class AnalysisConfig:
    max_intraday_lag: int = 60
    max_interday_lag: int = 20
    interday_minute: int = 960
    cross_lags: tuple[int, ...] = (0, 1, 2, 4, 8)


@dataclass(frozen=True)
class SensitivityConfig:
    model: str | None = None  # name of a PPairsTwoLSTM entry in ``models``
    lags: tuple[int, ...] = (5, 10, 20, 30)


@dataclass(frozen=True)
class SynthConfig:
    generator: str = "seasonal_ar_panel"
    days: int = 30
    start_date: str = "2019-01-07"
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DmConfig:
    harvey: bool = False


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"Config section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {name!r}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in raw.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{name}.{key} must be a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"Invalid section {name!r}: {exc}") from exc


# -----------------------------
# RunConfig
# -----------------------------
@dataclass(frozen=True)
class RunConfig:
    pairs: Mapping[str, str | None] = field(default_factory=dict)  # id -> input file (None when synthesized)
    format: str = "canonical_csv"
    min_coverage: float = DEFAULT_MIN_COVERAGE
    timezone_offset_minutes: int = 0
    seed: int = 0
    output_dir: str | None = None
    jobs: int = 1
    splits: SplitConfig = SplitConfig()
    models: tuple[Mapping[str, Any], ...] = ()
    grids: GridConfig = GridConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    sensitivity: SensitivityConfig = SensitivityConfig()
    synth: SynthConfig = SynthConfig()
    dm: DmConfig = DmConfig()

    def __post_init__(self) -> None:
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {sorted(FORMATS)}, got {self.format!r}")
        if not 0.0 <= self.min_coverage <= 1.0:
            raise ConfigError(f"min_coverage must be in [0, 1], got {self.min_coverage}")
        if not -MINUTES_PER_DAY < self.timezone_offset_minutes < MINUTES_PER_DAY:
            raise ConfigError("timezone_offset_minutes must be within one day")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        names = [m.get("name", m.get("family")) for m in self.models]
        if len(names) != len(set(names)):
            raise ConfigError("Model names must be unique")

    @property
    def pair_ids(self) -> list[str]:
        return list(self.pairs)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(sorted(unknown))}")
        pairs = raw.get("pairs", {})
        if isinstance(pairs, list):
            pairs = {p: None for p in pairs}
        if not isinstance(pairs, dict):
            raise ConfigError("pairs must be an object mapping pair id to input file")
        if base_dir is not None:
            pairs = {p: (str((base_dir / f).resolve()) if f else None) for p, f in pairs.items()}
        models = raw.get("models", [])
        if not isinstance(models, list) or not all(isinstance(m, dict) for m in models):
            raise ConfigError("models must be a list of objects")
        kwargs = {k: v for k, v in raw.items() if k in {"format", "min_coverage", "timezone_offset_minutes", "seed", "output_dir", "jobs"}}
        return cls(
            pairs=pairs,
            models=tuple(models),
            splits=_section(SplitConfig, raw.get("splits"), "splits"),
            grids=_section(GridConfig, raw.get("grids"), "grids"),
            analysis=_section(AnalysisConfig, raw.get("analysis"), "analysis"),
            sensitivity=_section(SensitivityConfig, raw.get("sensitivity"), "sensitivity"),
            synth=_section(SynthConfig, raw.get("synth"), "synth"),
            dm=_section(DmConfig, raw.get("dm"), "dm"),
            **kwargs,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pairs"] = dict(self.pairs)
        out["models"] = [dict(m) for m in self.models]
        return out

    def override(self, **changes: Any) -> "RunConfig":
        """Copy with the non-None ``changes`` applied (CLI flags)."""
        data = {k: v for k, v in changes.items() if v is not None}
        if not data:
            return self
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(data)
        return RunConfig(**current)


def _reject_duplicates(items: list[tuple[str, Any]]) -> dict:
    seen: dict[str, Any] = {}
    for key, value in items:
        if key in seen:
            raise ConfigError(f"Duplicate key {key!r} in config")
        seen[key] = value
    return seen


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"), object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("Config root must be an object")
    cfg = RunConfig.from_dict(raw, base_dir=path.parent)
    logger.info("Loaded config %s (%d pair(s), %d model(s))", path, len(cfg.pairs), len(cfg.models))
    return cfg


def resolve_output_dir(flag: str | None, config: RunConfig) -> Path:
    return Path(flag or config.output_dir or os.getenv(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR)
