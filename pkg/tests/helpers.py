from datetime import date, timedelta

import numpy as np

from src.market_data import RangePanel
from src.schema_config import MINUTES_PER_DAY

START = date(2019, 1, 7)


def make_panel(values, pair="EURUSD", start=START, mask=None, closes=None):
    """RangePanel over consecutive calendar days from a (T, D) array."""
    values = np.asarray(values, dtype=float)
    days = tuple(start + timedelta(days=i) for i in range(values.shape[1]))
    if mask is None:
        mask = np.isfinite(values)
    return RangePanel(pair, days, values, mask, closes)


def day_lines(day, minutes=range(MINUTES_PER_DAY), price=1.2, width=1e-4):
    """Canonical CSV lines for one day, one bar per listed minute."""
    out = []
    for m in minutes:
        hh, mm = divmod(m, 60)
        high = price * (1.0 + width)
        out.append(f"{day:%m/%d/%Y},{hh:02d}:{mm:02d},{price!r},{high!r},{price!r},{high!r}")
    return out
