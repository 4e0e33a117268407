import math

import numpy as np
import pytest
from scipy.signal import lfilter

from helpers import make_panel
from src.baselines import (
    BROWNIAN_RANGE_SCALE,
    ArModel,
    GarchModel,
    GarchSettings,
    ar_windows,
    fit_ar,
    fit_garch,
    fit_train_mean,
    garch_filter,
    predict_ar,
    predict_garch_range,
    tune_ar_order,
)
from src.errors import ConvergenceFailure, InsufficientHistory, SingularFit
from src.evaluation import FoldSplit
from src.schema_config import MINUTES_PER_DAY
from src.synth import SynthSpec, gen_garch_returns

T = MINUTES_PER_DAY


def _ar2_panel(seed, n_days=10, phi=(0.5, 0.3)):
    rng = np.random.default_rng(seed)
    cols = [lfilter([1.0], [1.0, -phi[0], -phi[1]], rng.standard_normal(T)) for _ in range(n_days)]
    return make_panel(10.0 + np.column_stack(cols))


# -----------------------------
# AR
# -----------------------------
def test_fit_ar_exact_geometric_series():
    y = 0.5 ** np.arange(50)
    model = fit_ar(y, 1)
    assert model.coefficients[0] == pytest.approx(0.5, abs=1e-9)
    assert model.intercept == pytest.approx(0.0, abs=1e-9)


def test_fit_ar_constant_series_is_singular():
    with pytest.raises(SingularFit):
        fit_ar(np.ones(100), 2)


def test_fit_ar_needs_history():
    with pytest.raises(InsufficientHistory):
        fit_ar(np.arange(12.0), 2)


def test_fit_ar_white_noise(rng):
    y = rng.standard_normal(20_000)
    model = fit_ar(y, 1)
    assert abs(model.coefficients[0]) < 4.0 / math.sqrt(y.size)


def test_ar_residuals_orthogonal_to_regressors():
    panel = _ar2_panel(0, n_days=3)
    model = fit_ar(panel, 3)
    windows, y, _, _ = ar_windows(panel, 3)
    X = np.column_stack([np.ones(len(y)), windows[:, ::-1]])
    e = y - X @ np.r_[model.intercept, model.coefficients]
    assert np.all(np.abs(X.T @ e) / len(y) < 1e-8)


def test_ar_windows_skip_gaps_and_day_boundaries():
    values = np.arange(2 * T, dtype=float).reshape(2, T).T
    values[10, 0] = np.nan
    windows, y, row, col = ar_windows(values, 2)
    assert len(y) == 2 * (T - 2) - 3  # targets 10, 11, 12 on day 0 touch the gap
    assert row.min() == 2 and set(col.tolist()) == {0, 1}
    np.testing.assert_array_equal(windows[0], [0.0, 1.0])


@pytest.mark.parametrize(
    "model, window, expected",
    [
        (ArModel(1, 0.0, (1.0,)), [0.3], 0.3),
        (ArModel(1, 1.0, (0.0,)), [7.0], 1.0),
        (ArModel(2, 0.0, (0.5, 0.25)), [0.4, 0.8], 0.5),
    ],
)
def test_predict_ar(model, window, expected):
    assert predict_ar(model, window) == pytest.approx(expected, abs=1e-15)


def test_predict_ar_short_window():
    with pytest.raises(InsufficientHistory):
        predict_ar(ArModel(2, 0.0, (0.5, 0.25)), [0.4])


def test_tune_ar_singleton_grid():
    split = FoldSplit(0, range(0, 6), range(6, 9), range(9, 10))
    assert tune_ar_order(_ar2_panel(1), split, orders=[4]).order == 4


def test_tune_ar_white_noise_prefers_order_one(rng):
    panel = make_panel(5.0 + rng.standard_normal((T, 41)))
    split = FoldSplit(0, range(0, 20), range(20, 40), range(40, 41))
    assert tune_ar_order(panel, split).order == 1


def test_tune_ar_ignores_test_days():
    panel = _ar2_panel(2)
    split = FoldSplit(0, range(0, 6), range(6, 9), range(9, 10))
    values = panel.values.copy()
    values[:, 9] = 100.0
    assert tune_ar_order(panel, split) == tune_ar_order(make_panel(values), split)


@pytest.mark.slow
def test_tune_ar_recovers_order_two():
    split = FoldSplit(0, range(0, 10), range(10, 19), range(19, 20))
    hits = sum(tune_ar_order(_ar2_panel(seed, n_days=20), split).order == 2 for seed in range(20))
    assert hits >= 18


def test_train_mean(random_panel):
    assert fit_train_mean(random_panel, range(3)) == pytest.approx(random_panel.values[:, :3].mean())


# -----------------------------
# GARCH
# -----------------------------
def _garch_returns(seed, n=5000):
    return gen_garch_returns(SynthSpec("garch_returns", {"n": n}, seed=seed)).returns


def test_garch_filter_recursion():
    r = np.array([0.1, -0.2, 0.3])
    sigma2 = garch_filter(r, 0.01, 0.1, 0.8, sigma2_0=0.05)
    expected = [0.05]
    for t in range(1, 3):
        expected.append(0.01 + 0.1 * r[t - 1] ** 2 + 0.8 * expected[-1])
    np.testing.assert_allclose(sigma2, expected, rtol=1e-12)


def test_garch_filter_floor():
    sigma2 = garch_filter(np.zeros(10), 0.0, 0.0, 0.0, sigma2_0=0.0, floor=1e-12)
    assert np.all(sigma2 >= 1e-12)


def test_fit_garch_likelihood_trace_and_feasibility():
    model = fit_garch(_garch_returns(0))
    assert model.omega > 0 and model.alpha >= 0 and model.beta >= 0
    assert model.persistence <= 0.999
    assert all(b >= a for a, b in zip(model.trace, model.trace[1:]))
    assert model.to_dict()["likelihood_trace_summary"]["non_decreasing"]
    assert GarchModel.from_dict(model.to_dict()).omega == model.omega


def test_fit_garch_zero_returns():
    with pytest.raises(ConvergenceFailure):
        fit_garch(np.zeros(2000))


def test_fit_garch_needs_history():
    with pytest.raises(InsufficientHistory):
        fit_garch(np.ones(500))


def test_range_scale_modes():
    r = _garch_returns(1)
    fitted = fit_garch(r)
    sigma = np.sqrt(garch_filter(r, fitted.omega, fitted.alpha, fitted.beta, fitted.sigma2_0))
    model = fit_garch(r, ranges=2.5 * sigma)
    assert model.range_scale == pytest.approx(2.5, rel=1e-6)
    brownian = fit_garch(r, settings=GarchSettings(range_scale_mode="brownian"))
    assert brownian.range_scale == BROWNIAN_RANGE_SCALE


def test_predict_garch_range_examples():
    assert predict_garch_range(GarchModel(4.0, 0.0, 0.0, range_scale=1.0), 123.0, 456.0) == 2.0
    assert predict_garch_range(GarchModel(4.0, 0.1, 0.5, range_scale=0.0), 1.0, 1.0) == 0.0
    assert predict_garch_range(GarchModel(0.0, 0.0, 1.0, range_scale=1.0), 0.7, 9.0) == 3.0


@pytest.mark.slow
def test_fit_garch_recovers_parameters():
    hits = 0
    for seed in range(10):
        model = fit_garch(_garch_returns(seed, n=50_000))
        hits += abs(model.alpha - 0.05) <= 0.03 and abs(model.beta - 0.90) <= 0.05
    assert hits >= 8
