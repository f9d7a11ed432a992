"""
Interpretation experiments on a trained model: time steps of influence,
memory-cell/storage correlations and single-cell attribution inspection
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from tqdm import tqdm

from attribution import DEFAULT_STEPS, AttributionMatrix, Baseline, integrated_gradients
from data_io import (
    DISCHARGE,
    FORCING_VARIABLES,
    DateRange,
    DischargeSeries,
    ForcingSeries,
    NormStats,
    ProxyStateSeries,
    Sample,
    SampleSet,
    denormalize,
)
from exceptions import ConstantSeries, StateAlignmentError
from grad_engine import Target
from lstm_core import ModelParams, forward, forward_batch

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 2e-3
DISPLAY_CORRELATION = 0.5


## Time steps of influence

@dataclass(frozen=True)
class TsoiResult:
    date: pd.Timestamp
    doy: int
    tsoi: int


def tsoi(attr: Union[AttributionMatrix, np.ndarray], threshold: float = DEFAULT_THRESHOLD) -> int:
    """Number of trailing days whose inputs move the prediction.

    Per-step sums s_t of the signed attributions are differenced; with n the
    first 1-based t >= 2 where |s_t - s_{t-1}| > threshold, the result is
    T - n + 1, or 0 when no difference crosses.
    """
    values = attr.values if isinstance(attr, AttributionMatrix) else np.asarray(attr, dtype=np.float64)
    steps = values.sum(axis=1)
    seq_len = steps.shape[0]
    if seq_len < 2:
        return 0
    crossings = np.flatnonzero(np.abs(np.diff(steps)) > threshold)
    if crossings.size == 0:
        return 0
    first = int(crossings[0]) + 2
    return seq_len - first + 1


def tsoi_series(
    params: ModelParams,
    samples: SampleSet,
    threshold: float = DEFAULT_THRESHOLD,
    m: int = DEFAULT_STEPS,
    baseline: Optional[Baseline] = None,
    show_progress: bool = False,
) -> List[TsoiResult]:
    """Output-target TSOI of every sample"""
    if baseline is None:
        baseline = Baseline.zeros(samples.seq_len, samples.inputs.shape[-1])
    results = []
    for sample in tqdm(samples, total=len(samples), desc="tsoi", disable=not show_progress):
        attr = integrated_gradients(params, sample.inputs, baseline, Target.output(), m)
        day = pd.Timestamp(sample.prediction_date)
        results.append(TsoiResult(day, int(day.dayofyear), tsoi(attr, threshold)))
    logger.info("computed TSOI for %d samples (threshold %g, m=%d)", len(results), threshold, m)
    return results


def tsoi_frame(results: Sequence[TsoiResult]) -> pd.DataFrame:
    return pd.DataFrame({
        "date": [r.date for r in results],
        "doy": [r.doy for r in results],
        "tsoi": [r.tsoi for r in results],
    })


@dataclass(frozen=True)
class DoyQuantileCurve:
    """TSOI quartiles per day of year; frame columns doy, q25, q50, q75"""
    frame: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()


def doy_quantiles(results: Sequence[TsoiResult]) -> DoyQuantileCurve:
    if len(results) == 0:
        raise ValueError("no TSOI results to aggregate")
    by_doy = tsoi_frame(results).astype({"tsoi": np.float64}).groupby("doy")["tsoi"]
    frame = pd.DataFrame({
        "q25": by_doy.quantile(0.25, interpolation="linear"),
        "q50": by_doy.quantile(0.50, interpolation="linear"),
        "q75": by_doy.quantile(0.75, interpolation="linear"),
    }).reset_index()
    return DoyQuantileCurve(frame)


def doy_climatology(
    forcings: ForcingSeries,
    discharge: Optional[DischargeSeries] = None,
    period: Optional[DateRange] = None,
) -> pd.DataFrame:
    """Median precip, discharge and tmin per day of year (reference panels)"""
    frame = forcings.frame[["precip", "tmin"]]
    if discharge is not None:
        frame = frame.join(discharge.frame[[DISCHARGE]], how="inner")
    if period is not None:
        frame = frame.loc[period.start:period.end]
    climatology = frame.groupby(frame.index.dayofyear).median()
    climatology.index.name = "doy"
    return climatology.reset_index()


## Memory cells against storages

def cell_states(params: ModelParams, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """(N, T, H) memory-cell trajectories of a stack of samples"""
    inputs = np.asarray(inputs, dtype=np.float64)
    chunks = [forward_batch(inputs[s:s + batch_size], params).c for s in range(0, inputs.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def _is_constant(std: np.ndarray, mean: np.ndarray) -> np.ndarray:
    return std <= 1e-12 * np.maximum(1.0, np.abs(mean))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two equally long 1-d series")
    if _is_constant(a.std(), a.mean()) or _is_constant(b.std(), b.mean()):
        raise ConstantSeries("correlation is undefined for a constant series")
    return float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))


@dataclass(frozen=True)
class CorrelationReport:
    """Sample-averaged Pearson correlation of every cell with every storage.

    `counts` holds the windows that entered each mean; windows where either
    side was constant are skipped. Pairs with no usable window are NaN.
    """
    mean: np.ndarray
    counts: np.ndarray
    n_samples: int
    state_names: List[str]

    @property
    def skipped(self) -> np.ndarray:
        return self.n_samples - self.counts

    @property
    def mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.abs(np.nan_to_num(self.mean, nan=0.0)) > DISPLAY_CORRELATION

    def best_cell(self, state: str) -> int:
        column = self.mean[:, self.state_names.index(state)]
        return int(np.nanargmax(np.abs(column)))

    def to_frame(self, masked: bool = False) -> pd.DataFrame:
        values = np.where(self.mask, self.mean, np.nan) if masked else self.mean
        frame = pd.DataFrame(values, columns=self.state_names)
        frame.insert(0, "cell", np.arange(values.shape[0]))
        return frame


def _proxy_windows(proxy: ProxyStateSeries, dates: pd.DatetimeIndex, seq_len: int) -> np.ndarray:
    """(N, T, K) storage values over each sample's input window"""
    one_day = pd.Timedelta(days=1)
    full = pd.date_range(dates.min() - (seq_len - 1) * one_day, dates.max(), freq="D")
    values = proxy.frame.reindex(full).to_numpy(dtype=np.float64)
    offsets = np.asarray((dates - full[0]).days) - (seq_len - 1)
    windows = sliding_window_view(values, seq_len, axis=0)[offsets].transpose(0, 2, 1)
    if np.isnan(windows).any():
        sample, step = np.argwhere(np.isnan(windows).any(axis=2))[0]
        missing = dates[sample] - (seq_len - 1 - step) * one_day
        raise StateAlignmentError(f"states have no value for {missing:%Y-%m-%d}")
    return windows


def cell_state_correlations(
    params: ModelParams,
    samples: SampleSet,
    proxy: ProxyStateSeries,
    batch_size: int = 256,
) -> CorrelationReport:
    if len(samples) == 0:
        raise ValueError("no samples to correlate")
    states = _proxy_windows(proxy, samples.dates, samples.seq_len)
    cells = cell_states(params, samples.inputs, batch_size)

    cell_std, cell_mean = cells.std(axis=1), cells.mean(axis=1)
    state_std, state_mean = states.std(axis=1), states.mean(axis=1)
    centered_cells = cells - cell_mean[:, None, :]
    centered_states = states - state_mean[:, None, :]
    covariance = np.einsum("nth,ntk->nhk", centered_cells, centered_states) / cells.shape[1]

    usable = ~_is_constant(cell_std, cell_mean)[:, :, None] & ~_is_constant(state_std, state_mean)[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.clip(covariance / (cell_std[:, :, None] * state_std[:, None, :]), -1.0, 1.0)
    rho = np.where(usable, rho, 0.0)
    counts = usable.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(counts > 0, rho.sum(axis=0) / counts, np.nan)

    skipped = int(usable.size - usable.sum())
    if skipped:
        logger.info("skipped %d constant cell/state windows", skipped)
    return CorrelationReport(mean, counts, len(samples), proxy.state_names)


## Single-cell inspection

@dataclass(frozen=True)
class CellInspection:
    """Cell-target attribution, the cell trajectory and physical tmin/tmax on one date axis"""
    cell: int
    dates: pd.DatetimeIndex
    attribution: AttributionMatrix
    trajectory: np.ndarray
    temperatures: np.ndarray

    def attribution_frame(self) -> pd.DataFrame:
        return self.attribution.to_frame(self.dates)

    def trajectory_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "timestep": np.arange(1, len(self.dates) + 1),
            "date": self.dates,
            f"cell{self.cell}": self.trajectory,
        })

    def temperature_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "timestep": np.arange(1, len(self.dates) + 1),
            "date": self.dates,
            "tmin": self.temperatures[:, 0],
            "tmax": self.temperatures[:, 1],
        })


def inspect_cell(
    params: ModelParams,
    sample: Sample,
    cell: int,
    stats: NormStats,
    m: int = DEFAULT_STEPS,
    baseline: Optional[Baseline] = None,
) -> CellInspection:
    target = Target.memory_cell(cell)
    target.validate(params)
    inputs = np.asarray(sample.inputs, dtype=np.float64)
    attr = integrated_gradients(params, inputs, baseline, target, m)
    trajectory = forward(inputs, params).c[:, cell]
    columns = [FORCING_VARIABLES.index("tmin"), FORCING_VARIABLES.index("tmax")]
    temperatures = denormalize(inputs[:, columns], stats, ("tmin", "tmax"))
    dates = pd.date_range(end=pd.Timestamp(sample.prediction_date), periods=inputs.shape[0], freq="D")
    return CellInspection(cell, dates, attr, trajectory, temperatures)
