import sys, json, argparse
from pathlib import Path

import numpy as np
import pandas as pd

from src.artifacts import MANIFEST_NAME, safe_name, verify_manifest
from src.config import DEFAULT_OUTPUT_DIR
from src.errors import RangecastError
from src.evaluation import ERROR_COLUMNS
from src.market_data import panel_from_json
from src.schema_config import ERROR_DTYPES, ERROR_RANGES, MINUTES_PER_DAY

REPORT_NAME = "validation_report.json"
MSE_TOLERANCE = 1e-9


def check_panels(out_dir):
    problems, summaries = [], {}
    ingest = out_dir / "ingest"
    if not ingest.is_dir():
        return problems, summaries
    for path in sorted(ingest.glob("*.json")):
        if path.name in (MANIFEST_NAME, "summary.json"):
            continue
        label = f"panel:{path.stem}"
        try:
            panel = panel_from_json(path)
        except (RangecastError, ValueError, KeyError) as e:
            problems.append(f"[{label}] Unreadable panel: {e}")
            continue
        observed = panel.values[panel.mask]
        if panel.T != MINUTES_PER_DAY:
            problems.append(f"[{label}] T={panel.T}, expected {MINUTES_PER_DAY}")
        if not np.isfinite(observed).all():
            problems.append(f"[{label}] {int((~np.isfinite(observed)).sum())} observed cells are not finite")
        if (observed < 0).any():
            problems.append(f"[{label}] {int((observed < 0).sum())} negative log ranges")
        if np.isfinite(panel.values[~panel.mask]).any():
            problems.append(f"[{label}] unobserved cells carry values")
        if list(panel.days) != sorted(set(panel.days)):
            problems.append(f"[{label}] days are not strictly increasing")
        summaries[label] = {"days": panel.n_days, "coverage": float(panel.mask.mean())}
    return problems, summaries


def check_schema(df, label):
    """Dtype and range checks for one error file, in ERROR_DTYPES / ERROR_RANGES terms."""
    problems = []
    for col, expected in ERROR_DTYPES.items():
        got = str(df[col].dtype)
        if got != expected:
            problems.append(f"[{label}] dtype mismatch for '{col}': got {got}, expected {expected}")
    for col, (lo, hi) in ERROR_RANGES.items():
        if not pd.api.types.is_numeric_dtype(df[col]):
            continue
        bad = df[col].isna()
        if lo is not None:
            bad |= df[col] < lo
        if hi is not None:
            bad |= df[col] > hi
        if bad.any():
            problems.append(f"[{label}] {col} has {int(bad.sum())} values outside [{lo}, {hi}]")
    return problems


def check_errors(out_dir):
    """Error files must agree with themselves and with mse_summary.json."""
    problems, summaries = [], {}
    evaluate = out_dir / "evaluate"
    summary_path = evaluate / "mse_summary.json"
    if not summary_path.is_file():
        return problems, summaries
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    for name in summary.get("models", []):
        label = f"errors:{name}"
        path = evaluate / "errors" / f"{safe_name(name)}.csv"
        if not path.is_file():
            problems.append(f"[{label}] Missing error file: {path}")
            continue
        df = pd.read_csv(path, float_precision="round_trip")
        missing = [c for c in ["fold"] + ERROR_COLUMNS if c not in df.columns]
        if missing:
            problems.append(f"[{label}] Missing required columns: {missing}")
            continue
        dups = df.duplicated(["fold", "pair", "day", "minute"]).sum()
        if dups:
            problems.append(f"[{label}] {dups} duplicate rows on fold/pair/day/minute")
        bad = ~np.isclose(df["squared_error"], (df["prediction"] - df["target"]) ** 2, rtol=1e-9, atol=0.0)
        if bad.any():
            problems.append(f"[{label}] {int(bad.sum())} rows where squared_error != (prediction - target)^2")
        problems.extend(check_schema(df, label))

        recorded = summary["summary"].get(name, {})
        for pair, g in df.groupby("pair"):
            fold_mse = g.groupby("fold")["squared_error"].mean().sort_index().tolist()
            rec = recorded.get(pair)
            if rec is None:
                problems.append(f"[{label}] pair {pair} missing from mse_summary.json")
                continue
            if not np.allclose(fold_mse, rec["fold_mse"], rtol=MSE_TOLERANCE, atol=0.0):
                problems.append(f"[{label}] {pair}: fold MSEs do not match mse_summary.json")
            std = float(np.std(fold_mse, ddof=1)) if len(fold_mse) > 1 else 0.0
            if not np.isclose(np.mean(fold_mse), rec["mean"], rtol=MSE_TOLERANCE, atol=0.0) or not np.isclose(
                std, rec["std"], rtol=1e-6, atol=1e-300
            ):
                problems.append(f"[{label}] {pair}: mean/std do not match the fold MSEs")
        summaries[label] = {"rows": len(df), "pairs": sorted(df["pair"].unique().tolist())}
    return problems, summaries


def check_manifests(out_dir):
    problems = []
    for manifest in sorted(out_dir.glob(f"*/{MANIFEST_NAME}")):
        try:
            verify_manifest(manifest.parent)
        except RangecastError as e:
            problems.append(f"[manifest:{manifest.parent.name}] {e}")
    return problems


def run_checks(out_dir):
    out_dir = Path(out_dir)
    problems, summaries = [], {}
    for check in (check_panels, check_errors):
        probs, summ = check(out_dir)
        problems.extend(probs)
        summaries.update(summ)
    problems.extend(check_manifests(out_dir))
    return problems, summaries


def parse_args():
    ap = argparse.ArgumentParser(description="Validate pipeline outputs")
    ap.add_argument("--out", default=DEFAULT_OUTPUT_DIR, help="Output directory to validate")
    return ap.parse_args()


def main():
    args = parse_args()
    out_dir = Path(args.out)
    if not out_dir.is_dir():
        print("VALIDATION FAILED. Missing output directory:", out_dir)
        sys.exit(1)
    problems, summaries = run_checks(out_dir)

    report_path = out_dir / REPORT_NAME
    report = {"problems": problems, "summaries": summaries}
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if problems:
        print("VALIDATION FAILED. See", report_path)
        for p in problems:
            print("-", p)
        sys.exit(1)
    else:
        print("VALIDATION PASSED. See", report_path)
        sys.exit(0)


if __name__ == "__main__":
    main()
