"""
features.py: turn RangePanels into model-ready samples.

Three sample families:
  time  -> x = (minute, day_of_week, month, is_month_end) in [0, 1]^4
  lag   -> intraday window (V_{t-p_t+1..t}) and interday window
           (V_{t+1} on the p_d previous days), target V_{t+1}
  pair  -> the lag family stacked column-wise over p aligned pairs

Targets are min-max normalized with statistics from training days only.
A sample is emitted only when every cell it touches is observed.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DegenerateScale, EmptySampleSet, NoCommonDays, SpecError
from src.market_data import RangePanel
from src.schema_config import MINUTES_PER_DAY

logger = logging.getLogger(__name__)

DaySubset = range | Sequence[int] | np.ndarray


# -----------------------------
# Normalization
# -----------------------------
@dataclass(frozen=True)
class Normalizer:
    pair: str
    minimum: float
    maximum: float

    def __post_init__(self) -> None:
        if not self.maximum > self.minimum:
            raise DegenerateScale(f"Normalizer for {self.pair!r}: max ({self.maximum}) must exceed min ({self.minimum})")

    @property
    def scale(self) -> float:
        return self.maximum - self.minimum

    def to_dict(self) -> dict[str, float | str]:
        return {"pair": self.pair, "min": self.minimum, "max": self.maximum}

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalizer":
        return cls(obj["pair"], float(obj["min"]), float(obj["max"]))


def fit_normalizer(panel: RangePanel, day_subset: DaySubset) -> Normalizer:
    idx = _day_indices(day_subset)
    if idx.size == 0:
        raise DegenerateScale(f"Empty day subset for {panel.pair!r}")
    observed = panel.values[:, idx][panel.mask[:, idx]]
    if observed.size == 0:
        raise DegenerateScale(f"No observed cells for {panel.pair!r} in the day subset")
    lo, hi = float(observed.min()), float(observed.max())
    if not hi > lo:
        raise DegenerateScale(f"Constant log-range series for {panel.pair!r} (value {lo})")
    return Normalizer(panel.pair, lo, hi)


def transform(norm: Normalizer, v):
    """(v - min) / (max - min); values outside the training range are not clipped."""
    return (np.asarray(v, dtype=float) - norm.minimum) / norm.scale


def inverse_transform(norm: Normalizer, u):
    return np.asarray(u, dtype=float) * norm.scale + norm.minimum


# -----------------------------
# Sample types
# -----------------------------
@dataclass(frozen=True)
class TimeFeatures:
    minute: float
    day_of_week: float
    month: float
    is_month_end: float

    def as_array(self) -> np.ndarray:
        return np.array([self.minute, self.day_of_week, self.month, self.is_month_end])


@dataclass(frozen=True)
class LagWindow:
    intraday: np.ndarray  # (p_t,)
    interday: np.ndarray  # (p_d,)
    target: float


@dataclass(frozen=True)
class PairLagWindow:
    intraday: np.ndarray  # (p_t, p)
    interday: np.ndarray  # (p_d, p)
    target: np.ndarray  # (p,)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """
    Immutable bundle of model inputs and normalized targets.

    ``inputs`` is ``(x,)`` for the time family, ``(intraday, interday)`` for
    the lag and pair families with shapes (N, p_t, w) and (N, p_d, w);
    ``target`` is (N, w) where w is the number of pairs.
    """

    kind: str
    pairs: tuple[str, ...]
    inputs: tuple[np.ndarray, ...]
    target: np.ndarray
    day: np.ndarray
    minute: np.ndarray
    dates: tuple[date, ...]
    normalizers: tuple[Normalizer, ...]

    def __post_init__(self) -> None:
        for arr in (*self.inputs, self.target, self.day, self.minute):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.target.shape[0])

    @property
    def width(self) -> int:
        return int(self.target.shape[1])

    def take(self, indices: np.ndarray | Sequence[int]) -> "SampleSet":
        idx = np.asarray(indices, dtype=int)
        return SampleSet(
            kind=self.kind,
            pairs=self.pairs,
            inputs=tuple(a[idx] for a in self.inputs),
            target=self.target[idx],
            day=self.day[idx],
            minute=self.minute[idx],
            dates=self.dates,
            normalizers=self.normalizers,
        )

    def __getitem__(self, i: int) -> TimeFeatures | LagWindow | PairLagWindow:
        if self.kind == "time":
            return TimeFeatures(*(float(v) for v in self.inputs[0][i]))
        intraday, interday = self.inputs[0][i], self.inputs[1][i]
        if self.kind == "lag":
            return LagWindow(intraday[:, 0].copy(), interday[:, 0].copy(), float(self.target[i, 0]))
        return PairLagWindow(intraday.copy(), interday.copy(), self.target[i].copy())

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        """Map (N, w) normalized values back to log-range units, column by column."""
        values = np.asarray(values, dtype=float).reshape(len(values), self.width)
        return np.column_stack([inverse_transform(n, values[:, j]) for j, n in enumerate(self.normalizers)])

    @property
    def raw_target(self) -> np.ndarray:
        return self.denormalize(self.target)

    def to_frame(self) -> pd.DataFrame:
        cols: dict[str, np.ndarray] = {}
        if self.kind == "time":
            for j, name in enumerate(("minute_f", "day_of_week", "month", "is_month_end")):
                cols[name] = self.inputs[0][:, j]
        else:
            for branch, arr in zip(("intraday", "interday"), self.inputs):
                for j, pair in enumerate(self.pairs):
                    for k in range(arr.shape[1]):
                        cols[f"{branch}_{pair}_{k}"] = arr[:, k, j]
        for j, pair in enumerate(self.pairs):
            cols[f"target_{pair}"] = self.target[:, j]
        cols["day"] = np.array([self.dates[d].isoformat() for d in self.day], dtype=object)
        cols["minute"] = self.minute
        return pd.DataFrame(cols)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()


# -----------------------------
# Builders
# -----------------------------
def _day_indices(day_subset: DaySubset) -> np.ndarray:
    return np.asarray(list(day_subset), dtype=int)


def month_end_flags(days: Sequence[date]) -> np.ndarray:
    """1 on the last date present for each (year, month), else 0."""
    last: dict[tuple[int, int], date] = {}
    for d in days:
        key = (d.year, d.month)
        if key not in last or d > last[key]:
            last[key] = d
    return np.array([1.0 if last[(d.year, d.month)] == d else 0.0 for d in days])


def make_time_samples(panel: RangePanel, normalizer: Normalizer, day_subset: DaySubset) -> SampleSet:
    idx = _day_indices(day_subset)
    month_end = month_end_flags(panel.days)
    local_day, minute = np.nonzero(panel.mask[:, idx].T)
    day = idx[local_day]
    if day.size == 0:
        raise EmptySampleSet(f"No observed cells for {panel.pair!r} in the day subset")

    weekday = np.array([panel.days[d].weekday() for d in day], dtype=float)
    month = np.array([panel.days[d].month for d in day], dtype=float)
    x = np.column_stack([minute / (MINUTES_PER_DAY - 1), weekday / 6.0, (month - 1.0) / 11.0, month_end[day]])
    target = transform(normalizer, panel.values[minute, day]).reshape(-1, 1)
    logger.debug("Time samples for %s: %d", panel.pair, len(day))
    return SampleSet("time", (panel.pair,), (x,), target, day, minute, panel.days, (normalizer,))


def _lag_arrays(panel: RangePanel, p_t: int, p_d: int, idx: np.ndarray):
    """Unfiltered windows for target minutes p_t..T-1 of the given days, day-major."""
    V = panel.values
    T = MINUTES_PER_DAY
    intr = sliding_window_view(V, p_t, axis=0)[: T - p_t][:, idx, :]  # (T-p_t, n, p_t)
    inter = sliding_window_view(V, p_d, axis=1)[p_t:][:, idx - p_d, :]  # (T-p_t, n, p_d)
    target = V[p_t:, idx]  # (T-p_t, n)
    n = idx.size
    return (
        intr.transpose(1, 0, 2).reshape(n * (T - p_t), p_t),
        inter.transpose(1, 0, 2).reshape(n * (T - p_t), p_d),
        target.T.reshape(-1),
    )


def _check_lags(p_t: int, p_d: int) -> None:
    if p_t < 1 or p_d < 1:
        raise SpecError(f"Lag lengths must be >= 1, got p_t={p_t}, p_d={p_d}")
    if p_t >= MINUTES_PER_DAY:
        raise SpecError(f"p_t must be below {MINUTES_PER_DAY}, got {p_t}")


def _admissible_days(day_subset: DaySubset, p_d: int) -> np.ndarray:
    idx = _day_indices(day_subset)
    return idx[idx >= p_d]


def _stride_keep(minutes: np.ndarray, p_t: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise SpecError(f"sample_stride must be >= 1, got {stride}")
    return (minutes - p_t) % stride == 0


def make_lag_samples(
    panel: RangePanel,
    normalizer: Normalizer,
    p_t: int,
    p_d: int,
    day_subset: DaySubset,
    stride: int = 1,
) -> SampleSet:
    _check_lags(p_t, p_d)
    idx = _admissible_days(day_subset, p_d)
    if idx.size == 0:
        raise EmptySampleSet(f"No day in the subset has {p_d} day(s) of history for {panel.pair!r}")

    intr, inter, target = _lag_arrays(panel, p_t, p_d, idx)
    day = np.repeat(idx, MINUTES_PER_DAY - p_t)
    minute = np.tile(np.arange(p_t, MINUTES_PER_DAY), idx.size)
    keep = (
        np.isfinite(target)
        & np.isfinite(intr).all(axis=1)
        & np.isfinite(inter).all(axis=1)
        & _stride_keep(minute, p_t, stride)
    )
    if not keep.any():
        raise EmptySampleSet(f"No admissible lag window for {panel.pair!r}")

    logger.debug("Lag samples for %s: %d of %d candidates", panel.pair, int(keep.sum()), keep.size)
    return SampleSet(
        kind="lag",
        pairs=(panel.pair,),
        inputs=(transform(normalizer, intr[keep])[:, :, None], transform(normalizer, inter[keep])[:, :, None]),
        target=transform(normalizer, target[keep]).reshape(-1, 1),
        day=day[keep],
        minute=minute[keep],
        dates=panel.days,
        normalizers=(normalizer,),
    )


def make_pair_samples(
    panels: Sequence[RangePanel],
    normalizers: Sequence[Normalizer],
    p_t: int,
    p_d: int,
    day_subset: DaySubset,
    stride: int = 1,
) -> SampleSet:
    if len(panels) < 2:
        raise SpecError("Pairs learning needs p >= 2 panels")
    if len(normalizers) != len(panels):
        raise SpecError("One normalizer per panel is required")
    if any(p.days != panels[0].days for p in panels[1:]):
        raise NoCommonDays("Panels must be aligned before stacking; run align_panels first")
    _check_lags(p_t, p_d)
    idx = _admissible_days(day_subset, p_d)
    if idx.size == 0:
        raise EmptySampleSet(f"No day in the subset has {p_d} day(s) of history")

    intr_cols, inter_cols, target_cols = [], [], []
    for panel, norm in zip(panels, normalizers):
        intr, inter, target = _lag_arrays(panel, p_t, p_d, idx)
        intr_cols.append(transform(norm, intr))
        inter_cols.append(transform(norm, inter))
        target_cols.append(transform(norm, target))
    intr_all = np.stack(intr_cols, axis=-1)  # (N, p_t, p)
    inter_all = np.stack(inter_cols, axis=-1)
    target_all = np.stack(target_cols, axis=-1)  # (N, p)

    day = np.repeat(idx, MINUTES_PER_DAY - p_t)
    minute = np.tile(np.arange(p_t, MINUTES_PER_DAY), idx.size)
    keep = (
        np.isfinite(target_all).all(axis=1)
        & np.isfinite(intr_all).all(axis=(1, 2))
        & np.isfinite(inter_all).all(axis=(1, 2))
        & _stride_keep(minute, p_t, stride)
    )
    if not keep.any():
        raise EmptySampleSet("No jointly admissible window across the pairs")

    return SampleSet(
        kind="pair",
        pairs=tuple(p.pair for p in panels),
        inputs=(intr_all[keep], inter_all[keep]),
        target=target_all[keep],
        day=day[keep],
        minute=minute[keep],
        dates=panels[0].days,
        normalizers=tuple(normalizers),
    )
