"""
Tests for TSOI extraction, day-of-year aggregation, cell/storage correlation
and single-cell inspection
"""
import numpy as np
import pandas as pd
import pytest

from analysis import (
    TsoiResult,
    cell_state_correlations,
    cell_states,
    doy_climatology,
    doy_quantiles,
    inspect_cell,
    pearson,
    tsoi,
    tsoi_series,
)
from attribution import Baseline
from conftest import make_discharge, make_forcings
from data_io import (
    DISCHARGE,
    ProxyStateSeries,
    SplitSpec,
    compute_norm_stats,
    denormalize,
    make_samples,
    split_periods,
)
from exceptions import ConstantSeries, StateAlignmentError
from lstm_core import init_params, predict
from metrics import nse
from synthetic import linear_teacher_task, memory_model_params, shut_input_params, snow_cell_params
from training import TrainConfig, train


## TSOI

def jump_at(t, seq_len=365, size=0.01):
    """Attributions whose per-step sum jumps between 1-based steps t-1 and t"""
    values = np.zeros((seq_len, 5))
    values[t - 1:, 0] = size
    return values


def test_tsoi_late_jump():
    assert tsoi(jump_at(361)) == 5


def test_tsoi_no_crossing():
    assert tsoi(np.zeros((365, 5))) == 0


def test_tsoi_earliest_jump():
    assert tsoi(jump_at(2)) == 364


def test_tsoi_final_step_jump():
    assert tsoi(jump_at(365)) == 1


def test_tsoi_sums_signed_features():
    values = jump_at(300)
    values[299:, 1] = -0.01
    assert tsoi(values) == 0


def test_tsoi_monotone_in_threshold():
    values = np.random.default_rng(0).normal(scale=1e-3, size=(365, 5))
    counts = [tsoi(values, threshold) for threshold in (1e-4, 1e-3, 2e-3, 5e-3, 1e-2, 1e9)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0


@pytest.fixture(scope="module")
def normalized_data():
    forcings = make_forcings(3 * 365)
    discharge = make_discharge(forcings)
    stats = compute_norm_stats(forcings, discharge, forcings.date_range)
    return forcings, discharge, stats


def test_shut_inputs_have_no_influence(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=120).subset(np.arange(0, 600, 100))
    results = tsoi_series(shut_input_params(seed=2), samples, m=200)
    assert len(results) == len(samples)
    assert [r.tsoi for r in results] == [0] * len(samples)
    assert results[0].date == samples.dates[0]
    assert results[0].doy == samples.dates[0].dayofyear


def test_constructed_memory_bounds_tsoi(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=120).subset(np.arange(0, 900, 150))
    results = tsoi_series(memory_model_params(k=30), samples)
    assert all(r.tsoi <= 32 for r in results)
    assert any(r.tsoi > 0 for r in results)


## Day-of-year aggregation

def results_for(days, values):
    return [TsoiResult(pd.Timestamp(d), pd.Timestamp(d).dayofyear, v) for d, v in zip(days, values)]


def test_doy_median():
    results = results_for(["2001-03-05", "2002-03-05", "2003-03-05"], [10, 30, 20])
    frame = doy_quantiles(results).to_frame()
    row = frame[frame["doy"] == 64].iloc[0]
    assert row["q50"] == 20.0
    assert row["q25"] == 15.0
    assert row["q75"] == 25.0


def test_doy_single_year():
    days = pd.date_range("2001-01-01", periods=30, freq="D")
    frame = doy_quantiles(results_for(days, range(30))).to_frame()
    assert len(frame) == 30
    assert (frame["q25"] == frame["q50"]).all() and (frame["q50"] == frame["q75"]).all()


def test_doy_order_and_permutation():
    rng = np.random.default_rng(1)
    days = pd.date_range("2001-01-01", periods=3 * 365, freq="D")
    results = results_for(days, rng.integers(0, 366, len(days)))
    frame = doy_quantiles(results).to_frame()
    assert (frame["q25"] <= frame["q50"]).all() and (frame["q50"] <= frame["q75"]).all()
    shuffled = [results[k] for k in rng.permutation(len(results))]
    pd.testing.assert_frame_equal(doy_quantiles(shuffled).to_frame(), frame)


def test_doy_quantiles_need_results():
    with pytest.raises(ValueError):
        doy_quantiles([])


def test_climatology_columns(normalized_data):
    forcings, discharge, _ = normalized_data
    frame = doy_climatology(forcings, discharge)
    assert list(frame.columns) == ["doy", "precip", "tmin", DISCHARGE]
    assert frame["doy"].tolist() == list(range(1, 367))


## Cells against storages

def proxy_from_cells(cells, dates, sign=1.0):
    return ProxyStateSeries(pd.DataFrame(sign * cells, index=dates,
                                         columns=[f"s{j}" for j in range(cells.shape[1])]))


def test_self_correlation_is_identity(normalized_data):
    forcings, _, stats = normalized_data
    params = init_params(5)
    sample = make_samples(forcings, None, stats, seq_len=100).subset(np.array([40]))
    cells = cell_states(params, sample.inputs)[0]
    window = pd.date_range(end=sample.dates[0], periods=100, freq="D")

    report = cell_state_correlations(params, sample, proxy_from_cells(cells, window))
    np.testing.assert_allclose(np.diag(report.mean), 1.0, atol=1e-12)
    assert np.all(np.abs(report.mean) <= 1.0)

    negated = cell_state_correlations(params, sample, proxy_from_cells(cells, window, -1.0))
    np.testing.assert_allclose(np.diag(negated.mean), -1.0, atol=1e-12)


def test_white_noise_is_uncorrelated(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=100).subset(np.arange(0, 30 * 30, 30))
    noise = np.random.default_rng(9).normal(size=len(forcings))
    proxy = ProxyStateSeries(pd.DataFrame({"noise": noise}, index=forcings.dates))
    report = cell_state_correlations(init_params(6), samples, proxy)
    assert report.counts.min() == 30
    assert np.abs(report.mean).max() < 0.2


def test_constant_windows_are_skipped(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=50).subset(np.arange(5))
    proxy = ProxyStateSeries(pd.DataFrame({"flat": np.full(len(forcings), 3.0),
                                           "ramp": np.arange(len(forcings), dtype=float)},
                                          index=forcings.dates))
    report = cell_state_correlations(init_params(7), samples, proxy)
    assert np.all(np.isnan(report.mean[:, 0]))
    assert np.all(report.skipped[:, 0] == 5)
    assert np.all(report.counts[:, 1] == 5)
    assert not report.mask[:, 0].any()

    masked = report.to_frame(masked=True)
    full = report.to_frame()
    shown = masked["ramp"].notna()
    np.testing.assert_array_equal(masked.loc[shown, "ramp"], full.loc[shown, "ramp"])
    assert (full.loc[~shown, "ramp"].abs() <= 0.5).all()


def test_states_must_cover_windows(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=50)
    late = forcings.dates[100:]
    proxy = ProxyStateSeries(pd.DataFrame({"s": np.arange(len(late), dtype=float)}, index=late))
    with pytest.raises(StateAlignmentError):
        cell_state_correlations(init_params(0), samples, proxy)


def test_pearson_rejects_constant():
    assert pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)
    with pytest.raises(ConstantSeries):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


## Single-cell inspection

def test_inspection_shapes(normalized_data):
    forcings, _, stats = normalized_data
    samples = make_samples(forcings, None, stats, seq_len=365)
    sample = samples[10]
    inspection = inspect_cell(init_params(8), sample, 2, stats, m=100)
    assert inspection.attribution.values.shape == (365, 5)
    assert inspection.trajectory.shape == (365,)
    assert inspection.temperatures.shape == (365, 2)
    assert inspection.dates[-1] == sample.prediction_date
    assert inspection.dates[0] == forcings.dates[10]
    np.testing.assert_allclose(inspection.temperatures[:, 0], forcings.frame["tmin"].to_numpy()[10:375])
    for frame in (inspection.attribution_frame(), inspection.trajectory_frame(), inspection.temperature_frame()):
        assert frame["date"].tolist() == list(inspection.dates)


def test_inspection_zero_where_input_is_baseline(normalized_data):
    forcings, _, stats = normalized_data
    sample = make_samples(forcings, None, stats, seq_len=60)[0]
    inputs = sample.inputs.copy()
    inputs[10] = 0.0
    inspection = inspect_cell(init_params(8), type(sample)(inputs, None, sample.prediction_date), 1, stats, m=50)
    assert np.all(inspection.attribution.values[10] == 0.0)


def test_snow_cell_signs(toy_trace):
    forcings, discharge = toy_trace.forcings(), toy_trace.discharge()
    stats = compute_norm_stats(forcings, discharge, forcings.date_range)
    samples = make_samples(forcings, None, stats, seq_len=365)
    day = next(d for d in samples.dates if d.month == 5 and d.day == 15)
    sample = samples[samples.index_of(day)]
    no_forcing = Baseline.physical_zero(stats, 365, ["precip", "srad"])
    inspection = inspect_cell(snow_cell_params(stats, cell=3), sample, 3, stats, m=200, baseline=no_forcing)

    attr = inspection.attribution.values
    precip_attr, srad_attr = attr[:, 0], attr[:, 1]
    freezing = inspection.temperatures[:, 0] < 0.0
    assert freezing.sum() >= 20
    assert np.all(precip_attr >= 0.0)
    assert np.all(srad_attr[freezing] < 0.0)

    wet = sample.inputs[:, 0] > no_forcing.values[:, 0]
    assert (freezing & wet).sum() >= 20
    assert np.all(precip_attr[freezing & wet] * srad_attr[freezing & wet] < 0.0)
    assert np.all(precip_attr[~wet] == 0.0)

    share_of_attribution = np.abs(precip_attr[freezing]).sum() / np.abs(precip_attr).sum()
    assert share_of_attribution > freezing.mean()


## End-to-end horizon oracle

@pytest.mark.slow
def test_linear_task_horizon():
    task = linear_teacher_task(seed=11, n_days=8 * 365, k=30)
    train_range, val_range, test_range = split_periods(task.forcings.date_range, SplitSpec(train_years=5))
    stats = compute_norm_stats(task.forcings, task.discharge, train_range)
    sets = [make_samples(task.forcings, task.discharge, stats, 120, period)
            for period in (train_range, val_range, test_range)]
    config = TrainConfig(seq_len=120, batch_size=128, show_progress=False)
    report = train(sets[0], sets[1], config, stats)

    test = sets[2]
    simulated = denormalize(predict(report.params, test.inputs), stats, [DISCHARGE])
    observed = denormalize(test.targets, stats, [DISCHARGE])
    assert nse(simulated, observed) > 0.9

    results = tsoi_series(report.params, test.subset(np.arange(0, len(test), 10)))
    assert 20 <= np.median([r.tsoi for r in results]) <= 40
