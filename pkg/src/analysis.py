"""
analysis.py: empirical diagnostics of log-range panels.

Per-minute profiles (overall and by weekday), intraday and interday
autocorrelation, and lagged cross-pair correlation. Results are returned as
small dataclasses / DataFrames and flattened to tidy CSV rows
(group, index, value) for plotting elsewhere.

ACF convention (Box-Jenkins): lag products that would cross a day boundary
or touch a masked cell are dropped from the numerator; the denominator is
the total sum of squares over every observed cell, which keeps |acf| <= 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from src.errors import DegenerateSeries, SpecError
from src.market_data import RangePanel
from src.schema_config import MINUTES_PER_DAY

logger = logging.getLogger(__name__)

WEEKDAY_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
DEFAULT_CROSS_LAGS = (0, 1, 2, 4, 8)


@dataclass(frozen=True)
class MinuteProfile:
    means: np.ndarray  # (1440,), NaN where no observation
    counts: np.ndarray  # (1440,)

    def to_frame(self, offset_minutes: int = 0) -> pd.DataFrame:
        minute = np.arange(MINUTES_PER_DAY)
        label = (minute + offset_minutes) % MINUTES_PER_DAY
        return pd.DataFrame(
            {
                "minute": minute,
                "label_minute": label,
                "label_time": [f"{m // 60:02d}:{m % 60:02d}" for m in label],
                "mean": self.means,
                "count": self.counts,
            }
        )


@dataclass(frozen=True)
class AcfResult:
    lags: np.ndarray
    values: np.ndarray  # NaN where undefined

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lag": self.lags, "acf": self.values})


# -----------------------------
# Profiles
# -----------------------------
def _profile(values: np.ndarray, mask: np.ndarray) -> MinuteProfile:
    counts = mask.sum(axis=1)
    sums = np.where(mask, values, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return MinuteProfile(means=means, counts=counts)


def minute_profile(panel: RangePanel) -> MinuteProfile:
    if panel.n_days == 0:
        raise SpecError(f"Panel {panel.pair!r} is empty")
    return _profile(panel.values, panel.mask)


def weekday_profiles(panel: RangePanel) -> dict[str, MinuteProfile]:
    if panel.n_days == 0:
        raise SpecError(f"Panel {panel.pair!r} is empty")
    weekday = np.array([d.weekday() for d in panel.days])
    out = {}
    for wd in sorted(set(weekday.tolist())):
        cols = weekday == wd
        out[WEEKDAY_NAMES[wd]] = _profile(panel.values[:, cols], panel.mask[:, cols])
    return out


def spike_minutes(profile: MinuteProfile, top: int = 5) -> list[int]:
    """Minutes with the highest mean log range, highest first."""
    means = np.where(np.isfinite(profile.means), profile.means, -np.inf)
    order = np.argsort(-means, kind="stable")
    return [int(m) for m in order[:top] if np.isfinite(profile.means[m])]


# -----------------------------
# Autocorrelation
# -----------------------------
def _centered(values: np.ndarray, mask: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    observed = values[mask]
    if observed.size < 2:
        raise DegenerateSeries(f"{what}: fewer than two observations")
    mu = observed.mean()
    ss = float(((observed - mu) ** 2).sum())
    if not ss > 0 or observed.min() == observed.max():
        raise DegenerateSeries(f"{what}: zero variance")
    return np.where(mask, values - mu, 0.0), ss


def intraday_acf(panel: RangePanel, max_lag: int) -> AcfResult:
    """ACF of the within-day series; lag-k products never span two days."""
    if max_lag < 1:
        raise SpecError(f"max_lag must be >= 1, got {max_lag}")
    x, ss = _centered(panel.values, panel.mask, f"intraday ACF of {panel.pair}")
    lags = np.arange(max_lag + 1)
    values = np.full(lags.size, np.nan)
    values[0] = 1.0
    for k in lags[1:]:
        if k >= MINUTES_PER_DAY:
            break
        # masked cells are zero in x, so their products vanish
        values[k] = float((x[k:] * x[:-k]).sum()) / ss
    return AcfResult(lags, values)


def interday_acf(panel: RangePanel, minute: int, max_lag: int) -> AcfResult:
    """ACF across days of the series V_t^D at a fixed minute t."""
    if not 0 <= minute < MINUTES_PER_DAY:
        raise SpecError(f"minute must be in [0, {MINUTES_PER_DAY - 1}], got {minute}")
    if max_lag < 1:
        raise SpecError(f"max_lag must be >= 1, got {max_lag}")
    return series_acf(panel.values[minute], panel.mask[minute], max_lag, f"interday ACF of {panel.pair}@{minute}")


def series_acf(series: np.ndarray, mask: np.ndarray | None, max_lag: int, what: str = "series") -> AcfResult:
    series = np.asarray(series, dtype=float)
    mask = np.isfinite(series) if mask is None else np.asarray(mask, dtype=bool)
    x, ss = _centered(series, mask, what)
    n = series.size
    lags = np.arange(max_lag + 1)
    values = np.full(lags.size, np.nan)
    values[0] = 1.0
    for k in lags[1:]:
        if k > n - 2:
            break
        values[k] = float((x[k:] * x[:-k]).sum()) / ss
    return AcfResult(lags, values)


# -----------------------------
# Cross-pair correlation
# -----------------------------
def _lagged_pearson(a: np.ndarray, b: np.ndarray, lag: int) -> float:
    """corr(a[t], b[t - lag]) over jointly observed within-day positions."""
    if lag >= MINUTES_PER_DAY:
        return float("nan")
    lead = a[lag:]
    trail = b[: MINUTES_PER_DAY - lag]
    ok = np.isfinite(lead) & np.isfinite(trail)
    if ok.sum() < 2:
        return float("nan")
    u = lead[ok] - lead[ok].mean()
    v = trail[ok] - trail[ok].mean()
    denom = np.sqrt((u * u).sum() * (v * v).sum())
    if not denom > 0:
        raise DegenerateSeries("Cross-pair correlation: zero variance in one of the series")
    return float((u * v).sum() / denom)


def cross_pair_correlation(
    panels: Sequence[RangePanel], lags: Iterable[int] = DEFAULT_CROSS_LAGS
) -> dict[int, pd.DataFrame]:
    """
    For each lag, a pairs x pairs matrix with entry (i, j) = corr(V_i[t], V_j[t - lag]).
    """
    if len(panels) < 2:
        raise SpecError("cross_pair_correlation needs at least two panels")
    if any(p.days != panels[0].days for p in panels[1:]):
        raise SpecError("Panels must be aligned (run align_panels first)")
    names = [p.pair for p in panels]
    out: dict[int, pd.DataFrame] = {}
    for lag in lags:
        if lag < 0:
            raise SpecError(f"Lags must be >= 0, got {lag}")
        mat = np.full((len(panels), len(panels)), np.nan)
        for i, pi in enumerate(panels):
            for j, pj in enumerate(panels):
                if lag == 0 and j < i:
                    mat[i, j] = mat[j, i]
                elif lag == 0 and i == j:
                    _lagged_pearson(pi.values, pj.values, 0)  # surfaces DegenerateSeries
                    mat[i, j] = 1.0
                else:
                    mat[i, j] = _lagged_pearson(pi.values, pj.values, lag)
        out[int(lag)] = pd.DataFrame(mat, index=names, columns=names)
    return out


# -----------------------------
# Tidy output
# -----------------------------
def tidy_profiles(profiles: dict[str, MinuteProfile], offset_minutes: int = 0) -> pd.DataFrame:
    frames = []
    for group, prof in profiles.items():
        df = prof.to_frame(offset_minutes)
        frames.append(pd.DataFrame({"group": group, "index": df["label_minute"], "value": df["mean"]}))
    return pd.concat(frames, ignore_index=True)


def tidy_acf(results: dict[str, AcfResult]) -> pd.DataFrame:
    frames = [pd.DataFrame({"group": g, "index": r.lags, "value": r.values}) for g, r in results.items()]
    return pd.concat(frames, ignore_index=True)


def tidy_cross(matrices: dict[int, pd.DataFrame]) -> pd.DataFrame:
    rows = []
    for lag, mat in matrices.items():
        for a in mat.index:
            for b in mat.columns:
                rows.append({"group": f"{a}~{b}", "index": lag, "value": mat.loc[a, b]})
    return pd.DataFrame(rows, columns=["group", "index", "value"])
