"""
market_data.py: minute-bar ingestion and the log-range panel.

Reads canonical CSV ("MM/DD/YYYY,HH:MM,open,high,low,close") or histdata
ASCII ("YYYYMMDD HHMMSS;O;H;L;C;V") minute bars, aligns them on a fixed
1440-minute daily grid and computes log ranges ln(high) - ln(low).

Missing minutes are masked (NaN in ``values``), never zero-filled.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import IO, Any, Iterable, Sequence

import numpy as np
import pandas as pd

from src.errors import (
    DuplicateTimestamp,
    EmptyData,
    EmptyPanel,
    InvalidPrice,
    NoCommonDays,
    ShapeError,
    SpecError,
)
from src.schema_config import (
    BAR_COLUMNS,
    DEFAULT_MIN_COVERAGE,
    FORMATS,
    MINUTES_PER_DAY,
    PANEL_CSV_INDEX,
    PRICE_COLUMNS,
    UNIQUE_COMBO,
)

logger = logging.getLogger(__name__)

Source = str | Path | bytes | bytearray | IO[bytes] | IO[str]


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True, slots=True)
class MinuteBar:
    date: date
    time: int
    open: float
    high: float
    low: float
    close: float


@dataclass(frozen=True, slots=True)
class RejectedBar:
    line_no: int
    line: str
    reason: str


@dataclass(frozen=True, slots=True)
class DroppedDay:
    day: date
    coverage: float


@dataclass(frozen=True)
class ParseResult:
    """Accepted bars (as a frame, in file order) plus per-line diagnostics."""

    frame: pd.DataFrame
    diagnostics: tuple[RejectedBar, ...] = ()

    @property
    def bars(self) -> list[MinuteBar]:
        return [
            MinuteBar(r.date, int(r.time), float(r.open), float(r.high), float(r.low), float(r.close))
            for r in self.frame.itertuples(index=False)
        ]

    def __len__(self) -> int:
        return len(self.frame)


@dataclass(frozen=True, eq=False)
class RangePanel:
    """
    Minutely log ranges of one pair on a T x D grid (T = 1440 minutes).

    ``values[t, d]`` is NaN wherever ``mask[t, d]`` is False. ``closes`` is an
    optional matrix of the same shape holding close prices, kept so minute
    returns can be derived for the GARCH baseline.
    """

    pair: str
    days: tuple[date, ...]
    values: np.ndarray
    mask: np.ndarray
    closes: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        days = tuple(self.days)
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        expected = (MINUTES_PER_DAY, len(days))
        if values.shape != expected or mask.shape != expected:
            raise ShapeError(
                f"Panel {self.pair!r}: values {values.shape} / mask {mask.shape}, expected {expected}"
            )
        if any(b <= a for a, b in zip(days, days[1:])):
            raise SpecError(f"Panel {self.pair!r}: days must be strictly increasing")
        observed = values[mask]
        if not np.all(np.isfinite(observed)) or np.any(observed < 0):
            raise InvalidPrice(f"Panel {self.pair!r}: observed log ranges must be finite and >= 0")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        if self.closes is not None:
            closes = np.array(self.closes, dtype=np.float64)
            if closes.shape != expected:
                raise ShapeError(f"Panel {self.pair!r}: closes {closes.shape}, expected {expected}")
            closes[~mask] = np.nan
            closes.setflags(write=False)
            object.__setattr__(self, "closes", closes)

    @property
    def T(self) -> int:
        return MINUTES_PER_DAY

    @property
    def n_days(self) -> int:
        return len(self.days)

    def select_days(self, indices: Sequence[int] | range | np.ndarray) -> "RangePanel":
        idx = np.asarray(list(indices), dtype=int)
        return RangePanel(
            pair=self.pair,
            days=tuple(self.days[i] for i in idx),
            values=self.values[:, idx],
            mask=self.mask[:, idx],
            closes=None if self.closes is None else self.closes[:, idx],
        )

    def with_values(self, values: np.ndarray, pair: str | None = None) -> "RangePanel":
        """Same grid and mask, new values (used by scaling checks and synthetic variants)."""
        return RangePanel(pair or self.pair, self.days, values, self.mask, self.closes)

    def minute_returns(self) -> np.ndarray:
        """
        Close-to-close log returns on the same T x D grid.

        The series runs day after day in chronological order; entry (t, d) is
        NaN when either close is missing.
        """
        if self.closes is None:
            raise EmptyData(f"Panel {self.pair!r} carries no close prices")
        flat = np.log(self.closes.T.reshape(-1))
        rets = np.full_like(flat, np.nan)
        rets[1:] = flat[1:] - flat[:-1]
        return rets.reshape(self.n_days, MINUTES_PER_DAY).T

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=[d.isoformat() for d in self.days])
        df.index.name = PANEL_CSV_INDEX
        return df

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RangePanel):
            return NotImplemented
        return (
            self.pair == other.pair
            and self.days == other.days
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]


# -----------------------------
# IO helpers
# -----------------------------
def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        raw: bytes | str = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if isinstance(raw, str):
        return raw
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw.decode("utf-8-sig")


# -----------------------------
# Parsing
# -----------------------------
def parse_bars(source: Source, fmt: str = "canonical_csv") -> ParseResult:
    """
    Parse minute bars from a path, bytes or stream.

    Malformed rows are not fatal: they are returned as ``RejectedBar``
    diagnostics and excluded from the frame. Duplicate (date, time) among the
    accepted rows raises ``DuplicateTimestamp``.
    """
    if fmt not in FORMATS:
        raise SpecError(f"Unknown bar format {fmt!r}; expected one of {sorted(FORMATS)}")
    sep, stamp_format = FORMATS[fmt]

    text = _read_text(source)
    lines = pd.Series(text.splitlines(), dtype=object)
    rows = pd.DataFrame({"line_no": np.arange(1, len(lines) + 1), "raw": lines.str.strip()})
    rows = rows[rows["raw"].str.len() > 0]
    if rows.empty:
        raise EmptyData("Input contains no bar records")

    # Optional header row (canonical files written by `synth` carry one)
    first = rows["raw"].iloc[0].split(sep)[0].strip().lower()
    if first in {"date", "datetime", "timestamp"}:
        rows = rows.iloc[1:]
        if rows.empty:
            raise EmptyData("Input contains a header but no bar records")

    parts = rows["raw"].str.split(sep, expand=True, regex=False)
    parts = parts.apply(lambda col: col.str.strip())
    n_fields = rows["raw"].str.count(sep) + 1

    if fmt == "canonical_csv":
        allowed_fields = {6}
        stamps = parts[0].fillna("") + " " + (parts[1].fillna("") if 1 in parts else "")
        price_cols = [2, 3, 4, 5]
    else:
        allowed_fields = {5, 6}
        stamps = parts[0].fillna("")
        price_cols = [1, 2, 3, 4]

    ts = pd.to_datetime(stamps, format=stamp_format, errors="coerce")
    prices = pd.DataFrame(
        {
            name: pd.to_numeric(parts[col], errors="coerce") if col in parts else np.nan
            for name, col in zip(PRICE_COLUMNS, price_cols)
        },
        index=rows.index,
    ).astype("float64")

    bad_count = ~n_fields.isin(allowed_fields)
    bad_stamp = ts.isna()
    bad_price = prices.isna().any(axis=1)
    non_positive = (prices <= 0).any(axis=1)
    inverted = prices["high"] < prices["low"]
    outside = (
        (prices["open"] < prices["low"])
        | (prices["open"] > prices["high"])
        | (prices["close"] < prices["low"])
        | (prices["close"] > prices["high"])
    )
    reason = pd.Series(
        np.select(
            [bad_count, bad_stamp, bad_price, non_positive, inverted, outside],
            [
                "unexpected field count",
                "unparseable timestamp",
                "unparseable price",
                "non-positive price",
                "high < low",
                "open/close outside [low, high]",
            ],
            default="",
        ),
        index=rows.index,
    )

    rejected = reason != ""
    diagnostics = tuple(
        RejectedBar(int(r.line_no), str(r.raw), str(why))
        for r, why in zip(rows[rejected].itertuples(index=False), reason[rejected])
    )
    if diagnostics:
        logger.warning("Rejected %d malformed bar line(s)", len(diagnostics))

    good = ~rejected
    stamp_ok = ts[good]
    frame = pd.DataFrame(
        {
            "date": stamp_ok.dt.date,
            "time": (stamp_ok.dt.hour * 60 + stamp_ok.dt.minute).astype("int64"),
            **{c: prices.loc[good, c] for c in PRICE_COLUMNS},
        }
    ).reset_index(drop=True)[BAR_COLUMNS]

    _check_unique(frame)
    logger.info("Parsed %d bar(s) (%s)", len(frame), fmt)
    return ParseResult(frame=frame, diagnostics=diagnostics)


def _check_unique(frame: pd.DataFrame) -> None:
    dups = frame.duplicated(UNIQUE_COMBO)
    if dups.any():
        row = frame[dups].iloc[0]
        hh, mm = divmod(int(row["time"]), 60)
        raise DuplicateTimestamp(f"{row['date'].isoformat()} {hh:02d}:{mm:02d}")


def bars_to_frame(bars: Iterable[MinuteBar] | pd.DataFrame) -> pd.DataFrame:
    if isinstance(bars, pd.DataFrame):
        return bars[BAR_COLUMNS]
    records = [(b.date, b.time, b.open, b.high, b.low, b.close) for b in bars]
    return pd.DataFrame.from_records(records, columns=BAR_COLUMNS)


def bars_to_text(bars: Iterable[MinuteBar] | pd.DataFrame, fmt: str = "canonical_csv", header: bool = True) -> str:
    """Inverse of parse_bars; prices use the shortest round-trip repr."""
    if fmt not in FORMATS:
        raise SpecError(f"Unknown bar format {fmt!r}; expected one of {sorted(FORMATS)}")
    sep, _ = FORMATS[fmt]
    frame = bars_to_frame(bars)
    lines = [sep.join(BAR_COLUMNS)] if header and fmt == "canonical_csv" else []
    for row in frame.itertuples(index=False):
        hh, mm = divmod(int(row.time), 60)
        prices = sep.join(repr(float(p)) for p in (row.open, row.high, row.low, row.close))
        if fmt == "canonical_csv":
            stamp = f"{row.date.month:02d}/{row.date.day:02d}/{row.date.year:04d}{sep}{hh:02d}:{mm:02d}"
        else:
            stamp = f"{row.date.year:04d}{row.date.month:02d}{row.date.day:02d} {hh:02d}{mm:02d}00"
        lines.append(f"{stamp}{sep}{prices}" + (f"{sep}0" if fmt == "histdata_ascii" else ""))
    return "\n".join(lines) + "\n"


# -----------------------------
# Log range
# -----------------------------
def log_range(bar: MinuteBar) -> float:
    if bar.low <= 0 or bar.high <= 0:
        raise InvalidPrice(f"Non-positive price in bar {bar}")
    if bar.high < bar.low:
        raise InvalidPrice(f"high < low in bar {bar}")
    return math.log(bar.high) - math.log(bar.low)


# -----------------------------
# Panel construction
# -----------------------------
def build_panel(
    bars: Iterable[MinuteBar] | pd.DataFrame,
    pair: str,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
    diagnostics: list[DroppedDay] | None = None,
) -> RangePanel:
    """
    Lay bars onto the 1440 x D grid. Days whose observed fraction is below
    ``min_coverage`` are dropped and appended to ``diagnostics``.
    """
    if not 0 < min_coverage <= 1:
        raise SpecError(f"min_coverage must be in (0, 1], got {min_coverage}")
    frame = bars_to_frame(bars)
    if frame.empty:
        raise EmptyPanel(f"No bars for pair {pair!r}")
    _check_unique(frame)
    if (frame["low"] <= 0).any() or (frame["high"] < frame["low"]).any():
        raise InvalidPrice(f"Pair {pair!r}: bars violate low > 0 and high >= low")

    days = sorted(frame["date"].unique())
    day_index = {d: i for i, d in enumerate(days)}
    cols = frame["date"].map(day_index).to_numpy(dtype=int)
    rows = frame["time"].to_numpy(dtype=int)

    values = np.full((MINUTES_PER_DAY, len(days)), np.nan)
    closes = np.full_like(values, np.nan)
    mask = np.zeros_like(values, dtype=bool)
    values[rows, cols] = np.log(frame["high"].to_numpy(dtype=float)) - np.log(frame["low"].to_numpy(dtype=float))
    closes[rows, cols] = frame["close"].to_numpy(dtype=float)
    mask[rows, cols] = True

    coverage = mask.mean(axis=0)
    keep = coverage >= min_coverage
    dropped = [DroppedDay(d, float(c)) for d, c, k in zip(days, coverage, keep) if not k]
    if dropped:
        logger.warning("Pair %s: dropped %d day(s) below %.0f%% coverage", pair, len(dropped), 100 * min_coverage)
        if diagnostics is not None:
            diagnostics.extend(dropped)
    if not keep.any():
        raise EmptyPanel(f"Pair {pair!r}: every day is below coverage {min_coverage}")

    kept_days = tuple(d for d, k in zip(days, keep) if k)
    logger.info("Pair %s: panel with %d day(s)", pair, len(kept_days))
    return RangePanel(pair, kept_days, values[:, keep], mask[:, keep], closes[:, keep])


def align_panels(panels: Sequence[RangePanel]) -> list[RangePanel]:
    """Restrict every panel to the intersection of their day sets."""
    if len(panels) < 2:
        raise SpecError("align_panels needs at least two panels")
    common = set(panels[0].days)
    for p in panels[1:]:
        common &= set(p.days)
    if not common:
        raise NoCommonDays("Panels share no calendar day: " + ", ".join(p.pair for p in panels))
    out = []
    for p in panels:
        idx = [i for i, d in enumerate(p.days) if d in common]
        out.append(p if len(idx) == p.n_days else p.select_days(idx))
    return out


# -----------------------------
# Serialization
# -----------------------------
def panel_to_csv_text(panel: RangePanel) -> str:
    buf = io.StringIO()
    panel.to_frame().to_csv(buf, na_rep="", lineterminator="\n")
    return buf.getvalue()


def panel_from_csv(source: Source, pair: str) -> RangePanel:
    df = pd.read_csv(io.StringIO(_read_text(source)), index_col=PANEL_CSV_INDEX, float_precision="round_trip")
    if len(df) != MINUTES_PER_DAY:
        raise ShapeError(f"Panel CSV for {pair!r} has {len(df)} minute rows, expected {MINUTES_PER_DAY}")
    values = df.to_numpy(dtype=float)
    days = tuple(date.fromisoformat(c) for c in df.columns)
    return RangePanel(pair, days, values, np.isfinite(values))


def panel_to_dict(panel: RangePanel) -> dict[str, Any]:
    def _nullable(m: np.ndarray) -> list[list[float | None]]:
        return [[None if not np.isfinite(v) else float(v) for v in row] for row in m]

    out: dict[str, Any] = {
        "pair": panel.pair,
        "days": [d.isoformat() for d in panel.days],
        "T": panel.T,
        "values": _nullable(panel.values),
        "mask": panel.mask.tolist(),
    }
    if panel.closes is not None:
        out["closes"] = _nullable(panel.closes)
    return out


def panel_from_dict(obj: dict[str, Any]) -> RangePanel:
    if int(obj.get("T", MINUTES_PER_DAY)) != MINUTES_PER_DAY:
        raise ShapeError(f"Panel T must be {MINUTES_PER_DAY}")

    def _dense(rows: list[list[float | None]]) -> np.ndarray:
        return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float).reshape(
            MINUTES_PER_DAY, -1
        )

    closes = _dense(obj["closes"]) if obj.get("closes") is not None else None
    return RangePanel(
        pair=obj["pair"],
        days=tuple(date.fromisoformat(d) for d in obj["days"]),
        values=_dense(obj["values"]),
        mask=np.array(obj["mask"], dtype=bool).reshape(MINUTES_PER_DAY, -1),
        closes=closes,
    )


def panel_to_json_text(panel: RangePanel) -> str:
    return json.dumps(panel_to_dict(panel), separators=(",", ":")) + "\n"


def panel_from_json(source: Source) -> RangePanel:
    return panel_from_dict(json.loads(_read_text(source)))


def diagnostics_frame(rejected: Sequence[RejectedBar] = (), dropped: Sequence[DroppedDay] = ()) -> pd.DataFrame:
    rows = [{"kind": "rejected_bar", "line_no": r.line_no, "detail": r.line, "reason": r.reason} for r in rejected]
    rows += [
        {"kind": "dropped_day", "line_no": "", "detail": d.day.isoformat(), "reason": f"coverage={d.coverage!r}"}
        for d in dropped
    ]
    return pd.DataFrame(rows, columns=["kind", "line_no", "detail", "reason"])
