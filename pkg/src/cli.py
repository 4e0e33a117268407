#!/usr/bin/env python3
"""
cli.py: command-line surface of the forecasting pipeline.

Usage:
  python -m src.cli synth      --config configs/synthetic_30d.json --spec seasonal_ar --seed 7
  python -m src.cli ingest     --config configs/synthetic_30d.json
  python -m src.cli profile    --config configs/synthetic_30d.json
  python -m src.cli tune|train|evaluate|dmtest|sensitivity --config ...
  python -m src.cli report     --config configs/synthetic_30d.json

Each command writes under <out>/<command>/ and finishes with a manifest.json.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure; errors
are also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import pandas as pd

from src import __version__, artifacts
from src.artifacts import safe_name
from src.analysis import (
    cross_pair_correlation,
    interday_acf,
    intraday_acf,
    minute_profile,
    spike_minutes,
    tidy_acf,
    tidy_cross,
    tidy_profiles,
    weekday_profiles,
)
from src.config import RunConfig, load_config, resolve_output_dir
from src.errors import ConfigError, MissingArtifact, RangecastError, UsageError
from src.evaluation import (
    FoldSplit,
    blocked_splits,
    dm_grid,
    dm_matrix,
    evaluate_model,
    fold_summary,
    mse_table,
    percent_reduction,
    sensitivity_sweep,
)
from src.market_data import (
    align_panels,
    bars_to_text,
    build_panel,
    diagnostics_frame,
    panel_from_json,
    panel_to_csv_text,
    panel_to_json_text,
    parse_bars,
)
from src.model_zoo import (
    Family,
    ModelSpec,
    apply_cell,
    checkpoint_dict,
    default_grid,
    forecaster_from_dict,
    make_forecaster,
    map_jobs,
    tune_hyperparameters,
)
from src.schema_config import FORMATS
from src.synth import ALIASES, GENERATORS, SynthSpec, gen_seasonal_ar_panel, generate, panel_to_bars, synth_panels

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
COMMANDS = (
    "ingest", "profile", "acf", "crosscorr", "tune", "train",
    "evaluate", "dmtest", "sensitivity", "synth", "report",
)
DEFAULT_MODELS = (
    {"name": "AR", "family": "AR"},
    {"name": "GARCH", "family": "GARCH"},
    {"name": "PlainDNN", "family": "PlainDNN"},
    {"name": "LSTM_t", "family": "LSTM_t"},
    {"name": "LSTM_D", "family": "LSTM_D"},
    {"name": "2-LSTM", "family": "TwoLSTM"},
    {"name": "p-Pairs", "family": "PPairsTwoLSTM"},
)


# -----------------------------
# Run context
# -----------------------------
@dataclass
class RunContext:
    config: RunConfig
    out_dir: Path
    pairs: list[str]

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunContext":
        config = load_config(args.config).override(seed=args.seed, jobs=args.jobs, format=args.format)
        pairs = config.pair_ids
        if args.pair:
            unknown = [p for p in args.pair if pairs and p not in pairs]
            if unknown:
                raise ConfigError(f"--pair {', '.join(unknown)} not declared in the config")
            pairs = list(dict.fromkeys(args.pair))
        return cls(config, resolve_output_dir(args.out, config), pairs)

    def model_specs(self) -> list[ModelSpec]:
        specs = []
        for entry in self.config.models or DEFAULT_MODELS:
            entry = dict(entry)
            train = dict(entry.get("train", {}))
            train.setdefault("seed", self.config.seed)
            entry["train"] = train
            specs.append(ModelSpec.from_dict(entry))
        return specs


@dataclass
class CommandOutput:
    """Collects written files and inputs for the command's manifest."""

    ctx: RunContext
    command: str
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    @property
    def dir(self) -> Path:
        return self.ctx.out_dir / self.command

    def csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> Path:
        path = artifacts.write_csv(self.dir / name, frame, index=index)
        self.outputs.append(path)
        return path

    def json(self, name: str, obj: Any) -> Path:
        path = artifacts.write_json(self.dir / name, obj)
        self.outputs.append(path)
        return path

    def text(self, name: str, text: str) -> Path:
        path = artifacts.write_text(self.dir / name, text)
        self.outputs.append(path)
        return path

    def finish(self) -> None:
        artifacts.write_manifest(
            self.dir, self.command, self.ctx.config.seed, self.ctx.config.to_dict(), self.inputs, self.outputs
        )
        logger.info("%s: %d file(s) written to %s", self.command, len(self.outputs), self.dir)


def load_panels(ctx: RunContext, out: CommandOutput) -> dict:
    if not ctx.pairs:
        raise ConfigError("No pairs configured")
    panels = {}
    for pair in ctx.pairs:
        path = ctx.out_dir / "ingest" / f"{safe_name(pair)}.json"
        if not path.is_file():
            raise MissingArtifact(f"Missing panel for {pair}: {path} (run `ingest` first)")
        panels[pair] = panel_from_json(path)
        out.inputs.append(path)
    return panels


def splits_for(ctx: RunContext, panels: dict) -> list[FoldSplit]:
    n_days = next(iter(panels.values())).n_days
    return blocked_splits(n_days, ctx.config.splits.k, ctx.config.splits.ratios)


# -----------------------------
# Commands
# -----------------------------
def cmd_ingest(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "ingest")
    if not ctx.pairs:
        raise ConfigError("No pairs configured")
    built, rejected_all, summary = [], [], {}
    for pair in ctx.pairs:
        source = ctx.config.pairs.get(pair)
        path = Path(source) if source else ctx.out_dir / "synth" / f"{safe_name(pair)}.csv"
        if not path.is_file():
            raise MissingArtifact(f"Input file for {pair} not found: {path}")
        logger.info("Reading %s bars from %s", pair, path)
        out.inputs.append(path)
        parsed = parse_bars(path, ctx.config.format)
        dropped: list = []
        panel = build_panel(parsed.frame, pair, ctx.config.min_coverage, dropped)
        built.append(panel)
        diag = diagnostics_frame(parsed.diagnostics, dropped)
        diag.insert(0, "pair", pair)
        rejected_all.append(diag)
        summary[pair] = {"bars": len(parsed), "rejected": len(parsed.diagnostics), "dropped_days": len(dropped)}

    panels = align_panels(built) if len(built) > 1 else built
    for panel in panels:
        out.text(f"{safe_name(panel.pair)}.json", panel_to_json_text(panel))
        out.text(f"{safe_name(panel.pair)}.csv", panel_to_csv_text(panel))
        summary[panel.pair]["days"] = panel.n_days
        summary[panel.pair]["first_day"] = panel.days[0].isoformat()
        summary[panel.pair]["last_day"] = panel.days[-1].isoformat()
    out.csv("diagnostics.csv", pd.concat(rejected_all, ignore_index=True))
    out.json("summary.json", summary)
    out.finish()


def cmd_profile(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "profile")
    panels = load_panels(ctx, out)
    offset = ctx.config.timezone_offset_minutes
    frames, spikes = [], {}
    for pair, panel in panels.items():
        overall = minute_profile(panel)
        profiles = {"all": overall, **weekday_profiles(panel)}
        tidy = tidy_profiles(profiles, offset)
        tidy.insert(0, "pair", pair)
        frames.append(tidy)
        out.csv(f"minute_profile_{safe_name(pair)}.csv", overall.to_frame(offset))
        spikes[pair] = [(m + offset) % panel.T for m in spike_minutes(overall)]
    out.csv("profiles.csv", pd.concat(frames, ignore_index=True))
    out.json("spikes.json", {"timezone_offset_minutes": offset, "spike_minutes": spikes})
    out.finish()


def cmd_acf(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "acf")
    panels = load_panels(ctx, out)
    cfg = ctx.config.analysis
    results = {}
    for pair, panel in panels.items():
        results[f"{pair}/intraday"] = intraday_acf(panel, cfg.max_intraday_lag)
        results[f"{pair}/interday@{cfg.interday_minute}"] = interday_acf(panel, cfg.interday_minute, cfg.max_interday_lag)
    out.csv("acf.csv", tidy_acf(results))
    out.finish()


def cmd_crosscorr(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "crosscorr")
    panels = load_panels(ctx, out)
    matrices = cross_pair_correlation(list(panels.values()), ctx.config.analysis.cross_lags)
    for lag, mat in matrices.items():
        out.csv(f"crosscorr_lag{lag}.csv", mat, index=True)
    out.csv("crosscorr.csv", tidy_cross(matrices))
    out.finish()


def cmd_tune(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "tune")
    panels = load_panels(ctx, out)
    splits = splits_for(ctx, panels)
    grids = ctx.config.grids
    best = {}
    for spec in ctx.model_specs():
        if spec.family in {Family.GARCH, Family.TRAIN_MEAN}:
            continue
        grid = default_grid(spec, grids.dnn_layers, grids.dnn_widths, grids.lags, grids.ar_orders)
        result = tune_hyperparameters(spec, panels, splits, grid, ctx.config.jobs)
        out.csv(f"hp_{safe_name(spec.name)}.csv", result.table, index=True)
        best[spec.name] = {"cell": result.best_cell, "cells": result.cells}
        if spec.family is Family.LSTM_T and result.best_cell.get("lag") != spec.p_t:
            logger.warning(
                "%s: grid search prefers p=%s while runs default to p_t=%d", spec.name, result.best_cell["lag"], spec.p_t
            )
    out.json("tuning.json", best)
    out.finish()


def tuned_specs(ctx: RunContext, out: CommandOutput) -> list[ModelSpec]:
    """Model specs with tuned cells applied when a tune run exists."""
    specs = ctx.model_specs()
    path = ctx.out_dir / "tune" / "tuning.json"
    if not path.is_file():
        return specs
    out.inputs.append(path)
    tuned = artifacts.read_json(path, what="tuning results")
    return [apply_cell(s, tuned[s.name]["cell"]) if s.name in tuned else s for s in specs]


def _checkpoint_path(ctx: RunContext, spec: ModelSpec, fold: int) -> Path:
    return ctx.out_dir / "train" / "checkpoints" / safe_name(spec.name) / f"fold{fold}.json"


def _train_job(spec: ModelSpec, panels: dict, split: FoldSplit) -> dict:
    return checkpoint_dict(make_forecaster(spec).fit(panels, split))


def cmd_train(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "train")
    panels = load_panels(ctx, out)
    splits = splits_for(ctx, panels)
    specs = tuned_specs(ctx, out)
    jobs = [(spec, panels, split) for spec in specs for split in splits]
    results = map_jobs(_train_job, jobs, ctx.config.jobs)
    for (spec, _, split), ckpt in zip(jobs, results):
        path = _checkpoint_path(ctx, spec, split.fold)
        out.outputs.append(artifacts.write_json(path, ckpt))
        if spec.family.is_neural:
            rows = [
                {"group": "+".join(g["pairs"]), **rec}
                for g in ckpt["state"]["groups"]
                for rec in g["history"]
            ]
            out.csv(f"histories/{safe_name(spec.name)}_fold{split.fold}.csv", pd.DataFrame(rows))
    out.json("splits.json", [s.to_dict() for s in splits])
    out.finish()


def _evaluate_job(spec: ModelSpec, panels: dict, split: FoldSplit, checkpoint: dict | None):
    model = forecaster_from_dict(checkpoint) if checkpoint is not None else None
    return evaluate_model(spec, panels, split, model)


def cmd_evaluate(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "evaluate")
    panels = load_panels(ctx, out)
    splits = splits_for(ctx, panels)
    specs = tuned_specs(ctx, out)
    jobs = []
    for spec in specs:
        for split in splits:
            path = _checkpoint_path(ctx, spec, split.fold)
            if path.is_file():
                out.inputs.append(path)
                jobs.append((spec, panels, split, artifacts.read_json(path)))
            elif spec.family.is_neural:
                raise MissingArtifact(f"No checkpoint for {spec.name} fold {split.fold}: {path} (run `train` first)")
            else:
                jobs.append((spec, panels, split, None))
    results = map_jobs(_evaluate_job, jobs, ctx.config.jobs)

    summaries = {}
    for spec in specs:
        evs = [ev for ev in results if ev.model == spec.name]
        frames = []
        for ev in evs:
            frame = ev.errors.copy()
            frame.insert(0, "fold", ev.fold)
            frames.append(frame)
        out.csv(f"errors/{safe_name(spec.name)}.csv", pd.concat(frames, ignore_index=True))
        summaries[spec.name] = fold_summary(evs)
    out.json("mse_summary.json", {"models": list(summaries), "summary": summaries})
    out.csv("mse_table.csv", mse_table(summaries), index=True)
    out.finish()


def _load_errors(ctx: RunContext, out: CommandOutput) -> tuple[list[str], dict[str, pd.DataFrame]]:
    summary_path = ctx.out_dir / "evaluate" / "mse_summary.json"
    summary = artifacts.read_json(summary_path, what="evaluation summary (run `evaluate` first)")
    out.inputs.append(summary_path)
    errors = {}
    for name in summary["models"]:
        path = ctx.out_dir / "evaluate" / "errors" / f"{safe_name(name)}.csv"
        frame = artifacts.read_csv(path, what=f"error file for {name}")
        out.inputs.append(path)
        errors[name] = frame[frame["pair"].isin(ctx.pairs)] if ctx.pairs else frame
    return summary["models"], errors


def cmd_dmtest(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "dmtest")
    names, errors = _load_errors(ctx, out)
    harvey = bool(args.harvey or ctx.config.dm.harvey)
    matrix = dm_matrix({n: errors[n] for n in names}, harvey=harvey)
    out.csv("dm_matrix.csv", matrix)
    for pair in sorted(matrix["pair"].unique()):
        out.csv(f"dm_{safe_name(pair)}.csv", dm_grid(matrix, pair), index=True)
    out.finish()


def cmd_sensitivity(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "sensitivity")
    panels = load_panels(ctx, out)
    splits = splits_for(ctx, panels)
    specs = ctx.model_specs()
    wanted = ctx.config.sensitivity.model
    candidates = [s for s in specs if (s.name == wanted if wanted else s.family is Family.P_PAIRS)]
    if not candidates:
        if wanted:
            raise ConfigError(f"Sensitivity model {wanted!r} is not among the configured models")
        candidates = [ModelSpec.from_dict({"name": "p-Pairs", "family": "PPairsTwoLSTM", "train": {"seed": ctx.config.seed}})]
    curve = sensitivity_sweep(candidates[0], ctx.config.sensitivity.lags, panels, splits, ctx.config.jobs)
    out.csv("sensitivity.csv", curve)
    out.finish()


def cmd_synth(ctx: RunContext, args: argparse.Namespace) -> None:
    out = CommandOutput(ctx, "synth")
    cfg = ctx.config.synth
    params = dict(cfg.params)
    generator = ALIASES.get(args.spec or cfg.generator, args.spec or cfg.generator)
    if ctx.pairs:
        if generator == "multi_pair_coupled":
            params.setdefault("pairs", ctx.pairs)
            params.setdefault("loadings", [1.0] * len(params["pairs"]))
        else:
            params.setdefault("pair", ctx.pairs[0])
    spec = SynthSpec(generator, params, ctx.config.seed, args.days or cfg.days, cfg.start_date)

    if generator in {"ar_process", "garch_returns"}:
        result = generate(spec)
        if generator == "ar_process":
            out.csv("series.csv", pd.DataFrame({"t": range(len(result)), "value": result}))
        else:
            out.csv("series.csv", pd.DataFrame({"t": range(len(result.returns)), "value": result.returns, "sigma2": result.sigma2}))
    else:
        if generator == "seasonal_ar_panel":
            latent = gen_seasonal_ar_panel(spec)
            panels = [latent.panel]
            out.csv("profile.csv", pd.DataFrame({"minute": range(len(latent.profile)), "s": latent.profile}))
        else:
            panels = synth_panels(spec)
        for panel in panels:
            out.text(f"{safe_name(panel.pair)}.csv", bars_to_text(panel_to_bars(panel, float(params.get("price0", 1.0)))))
    out.json("synth_spec.json", {"generator": spec.generator, "params": params, "seed": spec.seed, "days": spec.days, "start_date": spec.start_date.isoformat()})
    out.finish()


def cmd_report(ctx: RunContext, args: argparse.Namespace) -> None:
    import validate_outputs

    out = CommandOutput(ctx, "report")
    present = [c for c in COMMANDS if c != "report" and (ctx.out_dir / c / artifacts.MANIFEST_NAME).is_file()]
    if not present:
        raise MissingArtifact(f"No command outputs under {ctx.out_dir}")
    for command in present:
        artifacts.verify_manifest(ctx.out_dir / command)
        out.inputs.append(ctx.out_dir / command / artifacts.MANIFEST_NAME)

    report: dict[str, Any] = {"version": __version__, "commands": present}
    if "evaluate" in present:
        summary = artifacts.read_json(ctx.out_dir / "evaluate" / "mse_summary.json")
        models, summaries = summary["models"], summary["summary"]
        report["mse"] = summaries
        out.csv("mse_table.csv", mse_table(summaries, scale=args.scale), index=True)
        baseline = "AR" if "AR" in summaries else models[0]
        report["percent_reduction_vs"] = baseline
        report["percent_reduction"] = {
            m: {
                p: percent_reduction(summaries[baseline][p]["mean"], s["mean"])
                for p, s in summaries[m].items()
                if p in summaries[baseline]
            }
            for m in models
            if m != baseline
        }
    if "dmtest" in present:
        matrix = artifacts.read_csv(ctx.out_dir / "dmtest" / "dm_matrix.csv")
        report["dm"] = json.loads(matrix.to_json(orient="records"))
        for pair in sorted(matrix["pair"].unique()):
            out.csv(f"dm_{safe_name(pair)}.csv", dm_grid(matrix, pair), index=True)
    if "tune" in present:
        tuning = artifacts.read_json(ctx.out_dir / "tune" / "tuning.json")
        report["tuning"] = {name: t["cell"] for name, t in tuning.items()}
        for name in tuning:
            table = pd.read_csv(ctx.out_dir / "tune" / f"hp_{safe_name(name)}.csv", index_col=0)
            out.csv(f"hp_{safe_name(name)}.csv", table, index=True)
        notes = []
        for spec in ctx.model_specs():
            cell = report["tuning"].get(spec.name, {})
            if spec.family is Family.LSTM_T and "lag" in cell and cell["lag"] != spec.p_t:
                notes.append(f"{spec.name}: grid search optimum p={cell['lag']} differs from the configured p_t={spec.p_t}")
        report["notes"] = notes
    if "sensitivity" in present:
        curve = artifacts.read_csv(ctx.out_dir / "sensitivity" / "sensitivity.csv")
        report["sensitivity"] = json.loads(curve.to_json(orient="records"))

    problems, _ = validate_outputs.run_checks(ctx.out_dir)
    report["validation_problems"] = problems
    if problems:
        logger.warning("Output validation found %d problem(s)", len(problems))
    out.json("report.json", report)
    out.finish()


HANDLERS: dict[str, Callable[[RunContext, argparse.Namespace], None]] = {
    "ingest": cmd_ingest,
    "profile": cmd_profile,
    "acf": cmd_acf,
    "crosscorr": cmd_crosscorr,
    "tune": cmd_tune,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "dmtest": cmd_dmtest,
    "sensitivity": cmd_sensitivity,
    "synth": cmd_synth,
    "report": cmd_report,
}


# -----------------------------
# CLI setup
# -----------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="Run config (JSON).")
    common.add_argument("--out", default=None, help="Output directory (default: config, then $RANGECAST_OUT, then ./outputs).")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed.")
    common.add_argument("--jobs", type=int, default=None, help="Worker processes for independent jobs.")
    common.add_argument("--pair", action="append", default=None, help="Restrict to this pair (repeatable).")
    common.add_argument("--format", choices=sorted(FORMATS), default=None, help="Input bar format.")
    common.add_argument("--log", dest="log_level", default="INFO", help="Logging level (DEBUG, INFO, WARNING, ERROR).")

    ap = _Parser(prog="rangecast", description="Intraday FX log-range volatility forecasting pipeline.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
        if name == "synth":
            p.add_argument("--spec", choices=sorted(set(GENERATORS) | set(ALIASES)), default=None, help="Generator.")
            p.add_argument("--days", type=int, default=None, help="Number of synthetic trading days.")
        if name == "dmtest":
            p.add_argument("--harvey", action="store_true", help="Apply the small-sample correction.")
        if name == "report":
            p.add_argument("--scale", type=float, default=1e-8, help="Divide MSE cells by this factor (default 1e-8).")
    return ap


def _emit_error(exc: RangecastError) -> None:
    sys.stderr.write(json.dumps(exc.to_dict()) + "\n")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _emit_error(exc)
        return exc.exit_code
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO), format=LOG_FORMAT)
    try:
        ctx = RunContext.from_args(args)
        HANDLERS[args.command](ctx, args)
    except RangecastError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _emit_error(exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
