from datetime import date

import numpy as np
import pytest

from helpers import make_panel
from src.errors import DegenerateScale, EmptySampleSet
from src.features import (
    LagWindow,
    Normalizer,
    PairLagWindow,
    fit_normalizer,
    inverse_transform,
    make_lag_samples,
    make_pair_samples,
    make_time_samples,
    transform,
)
from src.schema_config import MINUTES_PER_DAY

T = MINUTES_PER_DAY


def _ramp_panel(n_days=5, pair="EURUSD", start=date(2019, 1, 7)):
    # V[t, d] = (t + 1) / 10 + d, all distinct
    values = (np.arange(T)[:, None] + 1) / 10.0 + np.arange(n_days)[None, :]
    return make_panel(values, pair, start=start)


# -----------------------------
# Normalizer
# -----------------------------
def test_fit_normalizer_extrema():
    values = np.full((T, 1), np.nan)
    values[:3, 0] = [0.0, 2.0, 4.0]
    norm = fit_normalizer(make_panel(values), [0])
    assert (norm.minimum, norm.maximum) == (0.0, 4.0)


def test_constant_series_is_degenerate():
    with pytest.raises(DegenerateScale):
        fit_normalizer(make_panel(np.ones((T, 2))), [0, 1])


def test_normalizer_ignores_days_outside_subset(random_panel):
    values = random_panel.values.copy()
    values[10, 25] = 1.0  # global max lives on a test day
    panel = make_panel(values)
    norm = fit_normalizer(panel, range(20))
    assert norm.maximum == values[:, :20].max()
    values[11, 25] = 2.0
    assert fit_normalizer(make_panel(values), range(20)) == norm


def test_transform_contract():
    norm = Normalizer("X", 0.0, 4.0)
    assert transform(norm, 2.0) == 0.5
    assert transform(norm, 0.0) == 0.0
    assert transform(norm, 4.0) == 1.0
    assert transform(norm, 5.0) == 1.25
    v = np.linspace(-1.0, 6.0, 50)
    assert np.all(np.diff(transform(norm, v)) > 0)
    np.testing.assert_allclose(inverse_transform(norm, transform(norm, v)), v, atol=1e-12)


# -----------------------------
# Time samples
# -----------------------------
def test_time_features_origin_and_month_end():
    panel = make_panel(np.full((T, 31), 1e-4), start=date(2018, 1, 1))
    norm = Normalizer("EURUSD", 0.0, 1e-3)
    samples = make_time_samples(panel, norm, range(31))
    first = samples[0]
    assert (first.minute, first.day_of_week, first.month, first.is_month_end) == (0.0, 0.0, 0.0, 0.0)
    last_day = samples.take(np.flatnonzero(samples.day == 30))
    assert last_day.inputs[0][:, 3].tolist() == [1.0] * T
    assert ((samples.inputs[0] >= 0) & (samples.inputs[0] <= 1)).all()


def test_time_samples_skip_masked_cells():
    values = np.full((T, 2), 1e-4)
    values[7, 1] = np.nan
    samples = make_time_samples(make_panel(values), Normalizer("EURUSD", 0.0, 1e-3), [0, 1])
    assert len(samples) == 2 * T - 1
    assert not ((samples.day == 1) & (samples.minute == 7)).any()


# -----------------------------
# Lag samples
# -----------------------------
def test_lag_window_indexing():
    panel = _ramp_panel(2)
    norm = Normalizer("EURUSD", 0.0, 1.0)  # identity scaling
    samples = make_lag_samples(panel, norm, 2, 1, [1])
    first = samples[0]
    assert isinstance(first, LagWindow)
    np.testing.assert_allclose(first.intraday, [1.1, 1.2])
    assert first.target == pytest.approx(1.3)
    np.testing.assert_allclose(first.interday, [0.3])  # same target minute, previous day
    assert samples.minute[0] == 2


def test_lag_sample_count(random_panel):
    norm = fit_normalizer(random_panel, range(20))
    samples = make_lag_samples(random_panel, norm, 20, 5, range(5, 15))
    assert len(samples) == 10 * (T - 20)
    assert samples.inputs[0].shape == (len(samples), 20, 1)
    assert samples.inputs[1].shape == (len(samples), 5, 1)


def test_lag_history_requirement():
    panel = _ramp_panel(5)
    norm = Normalizer("EURUSD", 0.0, 10.0)
    samples = make_lag_samples(panel, norm, 2, 3, range(5))
    assert set(samples.day.tolist()) == {3, 4}
    with pytest.raises(EmptySampleSet):
        make_lag_samples(panel, norm, 2, 3, range(3))


def test_masked_cell_inside_window_excludes_sample():
    values = _ramp_panel(3).values.copy()
    values[100, 2] = np.nan
    panel = make_panel(values)
    norm = Normalizer("EURUSD", 0.0, 10.0)
    samples = make_lag_samples(panel, norm, 5, 1, [2])
    on_day = samples.minute[samples.day == 2]
    # minute 100 is the target for 100 and inside the windows of targets 101..105
    for m in range(100, 106):
        assert m not in on_day
    assert 99 in on_day and 106 in on_day


def test_no_look_ahead(random_panel):
    norm = fit_normalizer(random_panel, range(20))
    before = make_lag_samples(random_panel, norm, 10, 3, [10])
    values = random_panel.values.copy()
    values[:, 11:] += 1.0  # later days only
    after = make_lag_samples(make_panel(values), norm, 10, 3, [10])
    for a, b in zip(before.inputs, after.inputs):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(before.target, after.target)


def test_stride_keeps_every_kth_window(random_panel):
    norm = fit_normalizer(random_panel, range(20))
    samples = make_lag_samples(random_panel, norm, 4, 2, [5], stride=10)
    assert np.all((samples.minute - 4) % 10 == 0)


# -----------------------------
# Pair samples
# -----------------------------
def test_identical_pairs_give_identical_columns(random_panel):
    other = random_panel.with_values(random_panel.values, pair="GBPUSD")
    norms = [fit_normalizer(p, range(20)) for p in (random_panel, other)]
    samples = make_pair_samples([random_panel, other], norms, 3, 2, [5])
    intr, inter = samples.inputs
    np.testing.assert_array_equal(intr[..., 0], intr[..., 1])
    np.testing.assert_array_equal(inter[..., 0], inter[..., 1])
    assert isinstance(samples[0], PairLagWindow)


def test_joint_admissibility(random_panel):
    values = random_panel.values.copy()
    values[200, 6] = np.nan
    other = make_panel(values, "GBPUSD")
    norms = [fit_normalizer(p, range(20)) for p in (random_panel, other)]
    samples = make_pair_samples([random_panel, other], norms, 3, 2, [6])
    assert 200 not in samples.minute.tolist()
    assert len(samples) == len(make_lag_samples(other, norms[1], 3, 2, [6]))


def test_four_pair_shapes(random_panel):
    panels = [random_panel.with_values(random_panel.values * (1 + k), pair=f"P{k}") for k in range(4)]
    norms = [fit_normalizer(p, range(25)) for p in panels]
    samples = make_pair_samples(panels, norms, 20, 20, [25])
    window = samples[0]
    assert window.intraday.shape == (20, 4)
    assert window.interday.shape == (20, 4)
    assert window.target.shape == (4,)


def test_denormalize_and_csv_export(random_panel):
    norm = fit_normalizer(random_panel, range(20))
    samples = make_lag_samples(random_panel, norm, 3, 2, [4])
    raw = samples.raw_target[:, 0]
    np.testing.assert_allclose(raw, random_panel.values[samples.minute, samples.day], rtol=1e-12)
    frame = samples.to_frame()
    assert list(frame.columns[-3:]) == ["target_EURUSD", "day", "minute"]
    assert len(samples.to_csv_text().splitlines()) == len(samples) + 1
