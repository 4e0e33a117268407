"""
synth.py: seeded synthetic data with known structure.

Generators draw from Philox streams keyed by (seed, generator, component,
day), so a given seed yields the same numbers on every platform, and day d
of a panel does not depend on how many days follow it.

Panels come with synthetic OHLC closes: each cell gets a close-to-close
return r with |r| <= v and wicks of (v - |r|) / 2 on each side, so
ln(high / low) reproduces the log range v exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from src.config import make_rng
from src.errors import SpecError
from src.market_data import RangePanel
from src.schema_config import MINUTES_PER_DAY

logger = logging.getLogger(__name__)

GENERATORS = ("iid_noise", "ar_process", "seasonal_ar_panel", "garch_returns", "multi_pair_coupled")
ALIASES = {
    "iid": "iid_noise",
    "ar": "ar_process",
    "seasonal_ar": "seasonal_ar_panel",
    "garch": "garch_returns",
    "multi_pair": "multi_pair_coupled",
}

# stream components
_NOISE, _RETURNS, _FACTOR = 0, 1, 2


@dataclass(frozen=True)
class SynthSpec:
    generator: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    days: int = 30
    start_date: date = date(2019, 1, 7)

    def __post_init__(self) -> None:
        gen = ALIASES.get(self.generator, self.generator)
        if gen not in GENERATORS:
            raise SpecError(f"Unknown generator {self.generator!r}; choose from {', '.join(GENERATORS)}")
        object.__setattr__(self, "generator", gen)
        if isinstance(self.start_date, str):
            object.__setattr__(self, "start_date", date.fromisoformat(self.start_date))
        if self.days < 1:
            raise SpecError(f"days must be >= 1, got {self.days}")
        if self.seed < 0:
            raise SpecError("seed must be non-negative")

    @property
    def T(self) -> int:
        return MINUTES_PER_DAY

    @property
    def stream_id(self) -> int:
        return GENERATORS.index(self.generator)

    def param(self, key: str, default: Any) -> Any:
        return self.params.get(key, default)

    def rng(self, *keys: int) -> np.random.Generator:
        return make_rng(self.seed, self.stream_id, *keys)


def trading_days(start: date, n: int) -> tuple[date, ...]:
    """First n weekdays on or after ``start``."""
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return tuple(out)


def seasonal_profile(level: float, session: float = 0.0, spikes: Sequence[Sequence[float]] = ()) -> np.ndarray:
    """s(t) = level + session * (1 - cos(2 pi t / T)) / 2 plus single-minute spikes [(minute, height)]."""
    t = np.arange(MINUTES_PER_DAY)
    s = level + session * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / MINUTES_PER_DAY))
    for minute, height in spikes:
        m = int(minute)
        if not 0 <= m < MINUTES_PER_DAY:
            raise SpecError(f"Spike minute {m} is outside the day")
        s[m] += float(height)
    return s


# -----------------------------
# Synthetic OHLC
# -----------------------------
def synthetic_closes(values: np.ndarray, rng: np.random.Generator, price0: float = 1.0) -> np.ndarray:
    """Close prices whose minute returns satisfy |r| <= v, chained day after day."""
    u = rng.uniform(-1.0, 1.0, size=values.shape)
    r = (values * u).T.reshape(-1)
    log_close = math.log(price0) + np.cumsum(r)
    return np.exp(log_close).reshape(values.shape[1], values.shape[0]).T


def panel_to_bars(panel: RangePanel, price0: float = 1.0) -> pd.DataFrame:
    """
    OHLC bars (open = previous close) whose log range equals the panel value.
    Needs ``panel.closes``; unobserved cells produce no bar.
    """
    if panel.closes is None:
        raise SpecError(f"Panel {panel.pair!r} has no closes to build bars from")
    close = panel.closes.T.reshape(-1)
    v = panel.values.T.reshape(-1)
    log_close = np.log(close)
    log_open = np.empty_like(log_close)
    log_open[0] = math.log(price0)
    log_open[1:] = log_close[:-1]
    r = log_close - log_open
    wick = np.maximum((v - np.abs(r)) / 2.0, 0.0)
    ok = panel.mask.T.reshape(-1) & np.isfinite(log_open)
    high = np.exp(np.maximum(log_open, log_close) + wick)
    low = np.exp(np.minimum(log_open, log_close) - wick)
    pos = np.flatnonzero(ok)
    day, minute = pos // MINUTES_PER_DAY, pos % MINUTES_PER_DAY
    return pd.DataFrame(
        {
            "date": [panel.days[d] for d in day],
            "time": minute,
            "open": np.exp(log_open[pos]),
            "high": high[pos],
            "low": low[pos],
            "close": np.exp(log_close[pos]),
        }
    )


def _panel(spec: SynthSpec, pair: str, values: np.ndarray, days: tuple[date, ...], component: int) -> RangePanel:
    closes = synthetic_closes(values, spec.rng(_RETURNS, component), float(spec.param("price0", 1.0)))
    return RangePanel(pair, days, values, np.ones_like(values, dtype=bool), closes)


# -----------------------------
# Generators
# -----------------------------
def gen_iid_noise(spec: SynthSpec) -> RangePanel:
    """V = max(0, level + scale * z) with iid standard normal z."""
    level = float(spec.param("level", 5e-4))
    scale = float(spec.param("scale", 1e-4))
    if scale < 0:
        raise SpecError("scale must be >= 0")
    days = trading_days(spec.start_date, spec.days)
    z = np.column_stack([spec.rng(_NOISE, 0, d).standard_normal(MINUTES_PER_DAY) for d in range(spec.days)])
    return _panel(spec, spec.param("pair", "SYN"), np.maximum(level + scale * z, 0.0), days, 0)


def gen_ar_process(spec: SynthSpec) -> np.ndarray:
    """y_t = c + sum_i phi_i y_{t-i} + noise * e_t, after ``burn_in`` discarded steps."""
    phi = np.asarray(spec.param("coefficients", [0.5]), dtype=float)
    c = float(spec.param("intercept", 0.0))
    noise = float(spec.param("noise", 1.0))
    n = int(spec.param("n", 1000))
    burn_in = int(spec.param("burn_in", 100))
    initial = float(spec.param("initial", 0.0))
    if phi.size == 0 or n < 1 or burn_in < 0 or noise < 0:
        raise SpecError("ar_process needs coefficients, n >= 1, burn_in >= 0 and noise >= 0")
    if np.any(np.abs(np.roots(np.r_[1.0, -phi])) >= 1.0):
        raise SpecError(f"AR coefficients {phi.tolist()} are not stationary")
    e = c + noise * spec.rng(_NOISE).standard_normal(n + burn_in)
    e[0] += initial
    y = lfilter([1.0], np.r_[1.0, -phi], e)
    return y[burn_in:]


@dataclass(frozen=True)
class SeasonalPanel:
    panel: RangePanel
    profile: np.ndarray  # s(t), (T,)
    deviation: np.ndarray  # latent x, (T, D); profile[:, None] + deviation is V before truncation
    truncated: int

    @property
    def latent(self) -> np.ndarray:
        return self.profile[:, None] + self.deviation


def _seasonal_deviation(spec: SynthSpec, phi: float, psi: float, noise: float, lag: int, component: int) -> np.ndarray:
    """x_t^D = phi x_{t-lag}^D + psi x_t^{D-1} + noise e, zero before the first minute and day."""
    if abs(phi) + abs(psi) >= 1.0:
        raise SpecError(f"Unstable parameters: |phi| + |psi| = {abs(phi) + abs(psi)} >= 1")
    if not 1 <= lag < MINUTES_PER_DAY:
        raise SpecError(f"intraday lag must be in [1, {MINUTES_PER_DAY - 1}], got {lag}")
    a = np.zeros(lag + 1)
    a[0] = 1.0
    a[lag] = -phi
    x = np.zeros((MINUTES_PER_DAY, spec.days))
    prev = np.zeros(MINUTES_PER_DAY)
    for d in range(spec.days):
        eps = noise * spec.rng(_NOISE, component, d).standard_normal(MINUTES_PER_DAY)
        x[:, d] = lfilter([1.0], a, psi * prev + eps)
        prev = x[:, d]
    return x


def _profile_from(spec: SynthSpec) -> np.ndarray:
    return seasonal_profile(
        float(spec.param("level", 5e-4)), float(spec.param("session", 0.0)), spec.param("spikes", ())
    )


def gen_seasonal_ar_panel(spec: SynthSpec) -> SeasonalPanel:
    """V_t^D = s(t) + x_t^D truncated at 0, with x the seasonal-AR deviation."""
    phi = float(spec.param("phi", 0.5))
    psi = float(spec.param("psi", 0.3))
    noise = float(spec.param("noise", 1e-4))
    if noise < 0:
        raise SpecError("noise must be >= 0")
    profile = _profile_from(spec)
    deviation = _seasonal_deviation(spec, phi, psi, noise, int(spec.param("intraday_lag", 1)), 0)
    latent = profile[:, None] + deviation
    truncated = int((latent < 0).sum())
    if truncated:
        logger.info("Seasonal panel: %d negative value(s) truncated at 0", truncated)
    days = trading_days(spec.start_date, spec.days)
    panel = _panel(spec, spec.param("pair", "SYN"), np.maximum(latent, 0.0), days, 0)
    return SeasonalPanel(panel, profile, deviation, truncated)


@dataclass(frozen=True)
class GarchPath:
    returns: np.ndarray
    sigma2: np.ndarray  # sigma2[t] is the conditional variance of returns[t]


def gen_garch_returns(spec: SynthSpec) -> GarchPath:
    omega = float(spec.param("omega", 1e-6))
    alpha = float(spec.param("alpha", 0.05))
    beta = float(spec.param("beta", 0.90))
    n = int(spec.param("n", 50_000))
    if not (omega > 0 and alpha >= 0 and beta >= 0 and alpha + beta < 1):
        raise SpecError(f"Infeasible GARCH parameters omega={omega}, alpha={alpha}, beta={beta}")
    if n < 1:
        raise SpecError("n must be >= 1")
    z = spec.rng(_NOISE).standard_normal(n)
    r = np.empty(n)
    sigma2 = np.empty(n)
    s2 = omega / (1.0 - alpha - beta)
    for t in range(n):
        sigma2[t] = s2
        r[t] = math.sqrt(s2) * z[t]
        s2 = omega + alpha * r[t] * r[t] + beta * s2
    return GarchPath(r, sigma2)


@dataclass(frozen=True)
class MultiPair:
    panels: tuple[RangePanel, ...]
    factor: np.ndarray  # shared latent deviation, (T, D)
    idiosyncratic: np.ndarray  # (p, T, D)
    truncated: int


def gen_multi_pair(spec: SynthSpec) -> MultiPair:
    """
    V_j = s(t) + scale * (a_j f + noise * e_j), truncated at 0, where f and the
    e_j are independent seasonal-AR deviations with unit innovations.
    """
    loadings = [float(a) for a in spec.param("loadings", [1.0, 1.0])]
    pairs = list(spec.param("pairs", [f"SYN{j}" for j in range(len(loadings))]))
    if len(loadings) < 2 or len(pairs) != len(loadings) or len(set(pairs)) != len(pairs):
        raise SpecError("multi_pair_coupled needs >= 2 loadings and one unique pair id per loading")
    noise = float(spec.param("noise", 1.0))
    scale = float(spec.param("scale", 1e-4))
    if noise < 0 or scale < 0:
        raise SpecError("noise and scale must be >= 0")
    phi = float(spec.param("phi", 0.0))
    psi = float(spec.param("psi", 0.0))
    lag = int(spec.param("intraday_lag", 1))

    profile = _profile_from(spec)
    factor = _seasonal_deviation(spec, phi, psi, 1.0, lag, _FACTOR * 1000)
    idio = np.stack([_seasonal_deviation(spec, phi, psi, 1.0, lag, _FACTOR * 1000 + 1 + j) for j in range(len(pairs))])
    days = trading_days(spec.start_date, spec.days)
    panels = []
    truncated = 0
    for j, (pair, a) in enumerate(zip(pairs, loadings)):
        latent = profile[:, None] + scale * (a * factor + noise * idio[j])
        truncated += int((latent < 0).sum())
        panels.append(_panel(spec, pair, np.maximum(latent, 0.0), days, j))
    if truncated:
        logger.info("Multi-pair panels: %d negative value(s) truncated at 0", truncated)
    return MultiPair(tuple(panels), factor, idio, truncated)


def generate(spec: SynthSpec):
    return {
        "iid_noise": gen_iid_noise,
        "ar_process": gen_ar_process,
        "seasonal_ar_panel": gen_seasonal_ar_panel,
        "garch_returns": gen_garch_returns,
        "multi_pair_coupled": gen_multi_pair,
    }[spec.generator](spec)


def synth_panels(spec: SynthSpec) -> list[RangePanel]:
    """Panels from a panel generator, for writing canonical CSV."""
    out = generate(spec)
    if isinstance(out, RangePanel):
        return [out]
    if isinstance(out, SeasonalPanel):
        return [out.panel]
    if isinstance(out, MultiPair):
        return list(out.panels)
    raise SpecError(f"{spec.generator} produces a series, not panels")
