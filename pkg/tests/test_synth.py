from datetime import date

import numpy as np
import pytest

from src.analysis import cross_pair_correlation, interday_acf, intraday_acf, minute_profile
from src.errors import SpecError
from src.market_data import bars_to_text, build_panel, parse_bars
from src.schema_config import MINUTES_PER_DAY
from src.synth import (
    SynthSpec,
    gen_ar_process,
    gen_garch_returns,
    gen_iid_noise,
    gen_multi_pair,
    gen_seasonal_ar_panel,
    panel_to_bars,
    seasonal_profile,
    synth_panels,
    trading_days,
)

T = MINUTES_PER_DAY


def test_aliases_and_unknown_generator():
    assert SynthSpec("garch").generator == "garch_returns"
    assert SynthSpec("iid", start_date="2019-03-01").start_date == date(2019, 3, 1)
    with pytest.raises(SpecError):
        SynthSpec("brownian_bridge")
    with pytest.raises(SpecError):
        SynthSpec("iid", days=0)


def test_trading_days_skip_weekends():
    days = trading_days(date(2019, 1, 4), 3)  # a Friday
    assert days == (date(2019, 1, 4), date(2019, 1, 7), date(2019, 1, 8))


def test_spike_outside_day():
    with pytest.raises(SpecError):
        seasonal_profile(1e-4, spikes=[[T, 1e-3]])


# -----------------------------
# Seasonal AR panels
# -----------------------------
def test_deterministic_seasonality():
    spec = SynthSpec(
        "seasonal_ar_panel",
        {"phi": 0.0, "psi": 0.0, "noise": 0.0, "level": 2e-4, "session": 3e-4, "spikes": [[810, 1e-3]]},
        days=4,
    )
    out = gen_seasonal_ar_panel(spec)
    for d in range(4):
        np.testing.assert_array_equal(out.panel.values[:, d], out.profile)
    np.testing.assert_allclose(minute_profile(out.panel).means, out.profile, rtol=0, atol=1e-18)
    assert out.truncated == 0


def test_latent_components_sum_to_values():
    spec = SynthSpec("seasonal_ar_panel", {"phi": 0.5, "psi": 0.3, "noise": 4e-4, "level": 5e-4}, seed=1, days=5)
    out = gen_seasonal_ar_panel(spec)
    np.testing.assert_array_equal(out.panel.values, np.maximum(out.profile[:, None] + out.deviation, 0.0))
    assert out.truncated == int((out.latent < 0).sum()) > 0
    assert (out.panel.values >= 0).all()


def test_unstable_parameters():
    with pytest.raises(SpecError):
        gen_seasonal_ar_panel(SynthSpec("seasonal_ar_panel", {"phi": 0.6, "psi": 0.4}))


def test_intraday_coefficient_shows_in_acf():
    spec = SynthSpec("seasonal_ar_panel", {"phi": 0.5, "psi": 0.0, "noise": 1e-4, "level": 5e-3}, seed=2, days=20)
    acf = intraday_acf(gen_seasonal_ar_panel(spec).panel, 2)
    assert acf.values[1] == pytest.approx(0.5, abs=0.05)


@pytest.mark.slow
def test_interday_coefficient_shows_in_acf():
    spec = SynthSpec("seasonal_ar_panel", {"phi": 0.0, "psi": 0.4, "noise": 1e-4, "level": 5e-3}, seed=3, days=400)
    panel = gen_seasonal_ar_panel(spec).panel
    lag1 = [interday_acf(panel, m, 1).values[1] for m in range(0, T, 60)]
    assert np.mean(lag1) == pytest.approx(0.4, abs=0.05)


def test_days_do_not_depend_on_panel_length():
    short = gen_seasonal_ar_panel(SynthSpec("seasonal_ar_panel", seed=8, days=3)).panel
    long = gen_seasonal_ar_panel(SynthSpec("seasonal_ar_panel", seed=8, days=6)).panel
    np.testing.assert_array_equal(long.values[:, :3], short.values)


# -----------------------------
# GARCH returns
# -----------------------------
def test_garch_without_memory_is_iid():
    path = gen_garch_returns(SynthSpec("garch_returns", {"omega": 2e-6, "alpha": 0.0, "beta": 0.0, "n": 100_000}))
    assert path.returns.var() == pytest.approx(2e-6, rel=0.05)
    np.testing.assert_array_equal(path.sigma2, 2e-6)


def test_garch_unconditional_variance():
    path = gen_garch_returns(SynthSpec("garch_returns", {"n": 100_000}, seed=4))
    assert path.returns.var() == pytest.approx(1e-6 / 0.05, rel=0.10)


def test_garch_recursion_and_determinism():
    spec = SynthSpec("garch_returns", {"n": 500}, seed=5)
    a, b = gen_garch_returns(spec), gen_garch_returns(spec)
    np.testing.assert_array_equal(a.returns, b.returns)
    r, s2 = a.returns, a.sigma2
    np.testing.assert_allclose(s2[1:], 1e-6 + 0.05 * r[:-1] ** 2 + 0.90 * s2[:-1], rtol=1e-12)
    other = gen_garch_returns(SynthSpec("garch_returns", {"n": 500}, seed=6))
    assert not np.array_equal(other.returns, a.returns)


@pytest.mark.parametrize("params", [{"omega": 0.0}, {"alpha": -0.1}, {"alpha": 0.5, "beta": 0.5}, {"n": 0}])
def test_garch_infeasible(params):
    with pytest.raises(SpecError):
        gen_garch_returns(SynthSpec("garch_returns", params))


# -----------------------------
# Other generators
# -----------------------------
def test_ar_process_contract():
    y = gen_ar_process(SynthSpec("ar_process", {"coefficients": [0.5, 0.3], "n": 2000}, seed=1))
    assert y.shape == (2000,)
    with pytest.raises(SpecError):
        gen_ar_process(SynthSpec("ar_process", {"coefficients": [1.1]}))
    with pytest.raises(SpecError):
        synth_panels(SynthSpec("ar_process"))


def test_iid_panel_is_a_valid_panel():
    panel = gen_iid_noise(SynthSpec("iid_noise", {"pair": "XYZ"}, seed=9, days=3))
    assert panel.pair == "XYZ"
    assert panel.values.shape == (T, 3)
    assert panel.mask.all() and (panel.values >= 0).all()
    assert list(panel.days) == sorted(panel.days)


# -----------------------------
# Multi-pair panels
# -----------------------------
def _corr0(loadings, noise=1.0, days=10, level=5e-4, seed=0):
    spec = SynthSpec(
        "multi_pair_coupled", {"loadings": loadings, "noise": noise, "level": level}, seed=seed, days=days
    )
    out = gen_multi_pair(spec)
    return cross_pair_correlation(list(out.panels), [0])[0].iloc[0, 1], out


def test_pure_common_factor_is_perfectly_correlated():
    corr, out = _corr0([1.0, 1.0], noise=0.0)
    assert corr == pytest.approx(1.0, abs=1e-12)
    assert [p.pair for p in out.panels] == ["SYN0", "SYN1"]


def test_zero_loading_is_uncorrelated():
    corr, _ = _corr0([1.0, 0.0])
    assert abs(corr) < 3.0 / np.sqrt(T * 10)


def test_factor_model_correlation():
    corr, out = _corr0([2.0, 2.0], days=35, level=2e-3)
    assert out.truncated == 0
    assert corr == pytest.approx(0.8, abs=0.05)


def test_multi_pair_contract():
    with pytest.raises(SpecError):
        gen_multi_pair(SynthSpec("multi_pair_coupled", {"loadings": [1.0]}))
    with pytest.raises(SpecError):
        gen_multi_pair(SynthSpec("multi_pair_coupled", {"loadings": [1.0, 1.0], "pairs": ["A", "A"]}))


# -----------------------------
# Bars
# -----------------------------
def test_bars_reproduce_panel_values():
    panel = gen_iid_noise(SynthSpec("iid_noise", {"pair": "SYN"}, seed=12, days=2))
    bars = panel_to_bars(panel)
    assert len(bars) == 2 * T
    text = bars_to_text(bars)
    again = build_panel(parse_bars(text.encode()).frame, "SYN")
    assert again.days == panel.days
    np.testing.assert_allclose(again.values, panel.values, rtol=0, atol=1e-12)


def test_bars_need_closes(random_panel):
    with pytest.raises(SpecError):
        panel_to_bars(random_panel)
