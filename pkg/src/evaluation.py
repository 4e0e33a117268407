"""
evaluation.py: blocked cross-validation, test MSE, Diebold-Mariano tests,
and the lag sensitivity sweep.

All errors are measured in original log-range units. DM statistics use
squared-error loss differentials d = e_A - e_B with a Newey-West (Bartlett)
long-run variance, so a positive statistic means the column model B is
more accurate than the row model A.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm, t as student_t

from src.errors import DataError, InsufficientHistory, ShapeError, SpecError, SplitError
from src.market_data import RangePanel
from src.model_zoo import Family, Forecaster, ModelSpec, format_mean_std, make_forecaster, map_jobs, mean_std

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ["pair", "day", "minute", "target", "prediction", "squared_error"]
DM_CRITICAL = 1.96


# -----------------------------
# Blocked splits
# -----------------------------
@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: range
    validation: range
    test: range

    def __post_init__(self) -> None:
        parts = (self.train, self.validation, self.test)
        if any(len(r) == 0 or r.step != 1 for r in parts):
            raise SplitError(f"Fold {self.fold}: every range must be contiguous and non-empty")
        if not (self.train.stop == self.validation.start and self.validation.stop == self.test.start):
            raise SplitError(f"Fold {self.fold}: train < validation < test must be adjacent and ordered")

    @property
    def days(self) -> range:
        return range(self.train.start, self.test.stop)

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train": [self.train.start, self.train.stop],
            "validation": [self.validation.start, self.validation.stop],
            "test": [self.test.start, self.test.stop],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FoldSplit":
        return cls(int(obj["fold"]), range(*obj["train"]), range(*obj["validation"]), range(*obj["test"]))


def blocked_splits(n_days: int, k: int = 3, ratios: Sequence[float] = (0.6, 0.3, 0.1)) -> list[FoldSplit]:
    """
    k disjoint chronological blocks of floor(D/k) days (the remainder goes to
    the last block), each cut into train/validation/test by floor arithmetic.
    """
    if k < 1:
        raise SplitError(f"k must be >= 1, got {k}")
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three positive fractions summing to 1, got {tuple(ratios)}")
    if n_days < 10 * k:
        raise SplitError(f"{n_days} day(s) are too few for {k} fold(s); need at least {10 * k}")
    block = n_days // k
    splits = []
    for j in range(k):
        start = j * block
        stop = start + block if j < k - 1 else n_days
        n = stop - start
        n_train = math.floor(ratios[0] * n + 1e-9)
        n_val = math.floor(ratios[1] * n + 1e-9)
        a, b = start + n_train, start + n_train + n_val
        splits.append(FoldSplit(j, range(start, a), range(a, b), range(b, stop)))
    return splits


# -----------------------------
# Test MSE
# -----------------------------
def error_frame(predictions: pd.DataFrame) -> pd.DataFrame:
    out = predictions.copy()
    out["squared_error"] = (out["prediction"] - out["target"]) ** 2
    return out[ERROR_COLUMNS]


@dataclass
class FoldEvaluation:
    model: str
    fold: int
    mse: dict[str, float]  # pair -> test MSE
    errors: pd.DataFrame = field(repr=False)


def evaluate_model(
    spec: ModelSpec,
    panels: Mapping[str, RangePanel] | Sequence[RangePanel],
    split: FoldSplit,
    model: Forecaster | None = None,
) -> FoldEvaluation:
    """Fit on the fold (unless a fitted ``model`` is passed) and score the test days."""
    if model is None:
        model = make_forecaster(spec).fit(panels, split)
    errors = error_frame(model.predict(panels, split.test))
    if errors.empty:
        raise DataError(f"{spec.name}: no test predictions on fold {split.fold}")
    mse = {pair: float(g["squared_error"].mean()) for pair, g in errors.groupby("pair", sort=False)}
    logger.info(
        "%s fold %d: %s", spec.name, split.fold, ", ".join(f"{p}={v:.4g}" for p, v in mse.items())
    )
    return FoldEvaluation(spec.name, split.fold, mse, errors)


def _evaluate_job(spec: ModelSpec, panels: Mapping[str, RangePanel], split: FoldSplit) -> FoldEvaluation:
    return evaluate_model(spec, panels, split)


def evaluate_all(
    specs: Sequence[ModelSpec],
    panels: Mapping[str, RangePanel],
    splits: Sequence[FoldSplit],
    n_workers: int = 1,
) -> dict[str, list[FoldEvaluation]]:
    jobs = [(spec, panels, split) for spec in specs for split in splits]
    results = map_jobs(_evaluate_job, jobs, n_workers)
    out: dict[str, list[FoldEvaluation]] = {spec.name: [] for spec in specs}
    for ev in results:
        out[ev.model].append(ev)
    return out


def fold_summary(evaluations: Sequence[FoldEvaluation]) -> dict[str, dict]:
    """pair -> {fold_mse, mean, std} with the sample std (ddof=1) across folds."""
    pairs: dict[str, list[float]] = {}
    for ev in sorted(evaluations, key=lambda e: e.fold):
        for pair, value in ev.mse.items():
            pairs.setdefault(pair, []).append(value)
    out = {}
    for pair, values in pairs.items():
        mean, std = mean_std(values)
        out[pair] = {"fold_mse": values, "mean": mean, "std": std}
    return out


def mse_table(summaries: Mapping[str, Mapping[str, dict]], scale: float = 1.0) -> pd.DataFrame:
    """Models as rows, pairs as columns, "mean±std" cells divided by ``scale`` (e.g. 1e-8)."""
    pairs: list[str] = []
    for summary in summaries.values():
        pairs += [p for p in summary if p not in pairs]
    rows = []
    for model, summary in summaries.items():
        rows.append(
            [format_mean_std(summary[p]["mean"], summary[p]["std"], scale) if p in summary else "" for p in pairs]
        )
    table = pd.DataFrame(rows, index=list(summaries), columns=pairs)
    table.index.name = "model"
    return table


def percent_reduction(baseline: float, candidate: float) -> float:
    """How much lower candidate's MSE is than baseline's, in percent."""
    if not baseline > 0:
        raise SpecError("Baseline MSE must be positive")
    return 100.0 * (baseline - candidate) / baseline


# -----------------------------
# Diebold-Mariano
# -----------------------------
@dataclass(frozen=True)
class DmResult:
    statistic: float  # NaN when indeterminate
    mean_diff: float
    long_run_variance: float
    n: int
    p_value: float
    indeterminate: bool = False
    harvey: bool = False

    @property
    def significant(self) -> bool:
        return (not self.indeterminate) and abs(self.statistic) > DM_CRITICAL

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "mean_diff": self.mean_diff,
            "long_run_variance": self.long_run_variance,
            "n": self.n,
            "p_value": self.p_value,
            "significant": self.significant,
            "indeterminate": self.indeterminate,
            "harvey": self.harvey,
        }


def newey_west_variance(d: np.ndarray, bandwidth: int) -> float:
    n = d.size
    u = d - d.mean()
    lrv = float(np.dot(u, u)) / n
    for k in range(1, bandwidth + 1):
        gamma = float(np.dot(u[k:], u[:-k])) / n
        lrv += 2.0 * (1.0 - k / (bandwidth + 1)) * gamma
    return lrv


def dm_test(errors_a, errors_b, harvey: bool = False) -> DmResult:
    """
    Diebold-Mariano test on aligned squared-error series.

    Bandwidth floor(n^(1/3)). With ``harvey`` the statistic gets the
    one-step small-sample factor sqrt((n - 1) / n) and a t(n - 1) p-value.
    """
    ea = np.asarray(errors_a, dtype=float)
    eb = np.asarray(errors_b, dtype=float)
    if ea.shape != eb.shape or ea.ndim != 1:
        raise ShapeError(f"Error series must be aligned 1-D arrays, got {ea.shape} and {eb.shape}")
    n = ea.size
    if n < 10:
        raise InsufficientHistory(f"DM test needs n >= 10 aligned errors, got {n}")
    d = ea - eb
    mean_diff = float(d.mean())
    lrv = newey_west_variance(d, int(math.floor(n ** (1.0 / 3.0) + 1e-9)))
    if not lrv > 0:
        logger.warning("DM test indeterminate: zero long-run variance (n=%d)", n)
        return DmResult(float("nan"), mean_diff, max(lrv, 0.0), n, float("nan"), True, harvey)
    stat = mean_diff / math.sqrt(lrv / n)
    if harvey:
        stat *= math.sqrt((n - 1) / n)
        p_value = float(2.0 * student_t.sf(abs(stat), df=n - 1))
    else:
        p_value = float(2.0 * norm.sf(abs(stat)))
    return DmResult(float(stat), mean_diff, lrv, n, p_value, False, harvey)


def align_errors(errors_a: pd.DataFrame, errors_b: pd.DataFrame) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per pair, squared errors of both models on the timestamps both forecast."""
    keys = ["pair", "day", "minute"]
    merged = errors_a[keys + ["squared_error"]].merge(
        errors_b[keys + ["squared_error"]], on=keys, suffixes=("_a", "_b"), how="inner"
    )
    merged = merged.sort_values(keys, kind="mergesort")
    return {
        pair: (g["squared_error_a"].to_numpy(), g["squared_error_b"].to_numpy())
        for pair, g in merged.groupby("pair", sort=True)
    }


def dm_matrix(errors: Mapping[str, pd.DataFrame], harvey: bool = False) -> pd.DataFrame:
    """
    Upper-triangular DM table: for models in the given order, every pair
    (row earlier, column later) and every currency pair they share.
    """
    names = list(errors)
    if len(names) < 2:
        raise SpecError("dm_matrix needs at least two models")
    rows = []
    for i, row_model in enumerate(names):
        for col_model in names[i + 1 :]:
            for pair, (ea, eb) in align_errors(errors[row_model], errors[col_model]).items():
                res = dm_test(ea, eb, harvey=harvey)
                rows.append({"pair": pair, "row_model": row_model, "col_model": col_model, **res.to_dict()})
    columns = ["pair", "row_model", "col_model"] + list(DmResult(0.0, 0.0, 0.0, 0, 0.0).to_dict())
    return pd.DataFrame(rows, columns=columns)


def dm_grid(matrix: pd.DataFrame, pair: str) -> pd.DataFrame:
    """One pair's DM statistics laid out as row model x column model."""
    sub = matrix[matrix["pair"] == pair]
    rows = list(dict.fromkeys(sub["row_model"]))
    cols = list(dict.fromkeys(sub["col_model"]))
    grid = pd.DataFrame("", index=rows, columns=cols, dtype=object)
    for rec in sub.itertuples(index=False):
        cell = "n/a" if rec.indeterminate else f"{rec.statistic:.2f}{'*' if rec.significant else ''}"
        grid.loc[rec.row_model, rec.col_model] = cell
    grid.index.name = "model"
    return grid


# -----------------------------
# Sensitivity
# -----------------------------
def sensitivity_sweep(
    spec: ModelSpec,
    lags: Sequence[int],
    panels: Mapping[str, RangePanel],
    splits: Sequence[FoldSplit],
    n_workers: int = 1,
) -> pd.DataFrame:
    """
    Test MSE per pair for p = p_t = p_d over ``lags``, min-max normalized per
    pair across the grid. A flat or single-point curve is emitted as 0 and
    flagged ``degenerate``.
    """
    if spec.family is not Family.P_PAIRS:
        raise SpecError(f"Sensitivity sweep runs on the pairs model, got {spec.family.value}")
    lags = sorted(set(int(p) for p in lags))
    if not lags:
        raise SpecError("Empty lag grid")
    variants = [spec.with_overrides(name=f"{spec.name}@p={p}", p_t=p, p_d=p) for p in lags]
    results = evaluate_all(variants, panels, splits, n_workers)

    rows = []
    for p, variant in zip(lags, variants):
        for pair, s in fold_summary(results[variant.name]).items():
            rows.append({"pair": pair, "lag": p, "mse": s["mean"]})
    frame = pd.DataFrame(rows, columns=["pair", "lag", "mse"])
    lo = frame.groupby("pair")["mse"].transform("min")
    hi = frame.groupby("pair")["mse"].transform("max")
    span = hi - lo
    frame["degenerate"] = ~(span > 0)
    frame["normalized"] = np.where(frame["degenerate"], 0.0, (frame["mse"] - lo) / span.where(span > 0, 1.0))
    if frame["degenerate"].any():
        logger.warning("Sensitivity curve is flat or single-point for some pair(s)")
    return frame[["pair", "lag", "mse", "normalized", "degenerate"]]
