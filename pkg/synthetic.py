"""
Deterministic toy catchment: seasonal weather, a degree-day snow store and a
single linear soil reservoir

The generated stores serve as ground-truth hydrological states, and the
forcing/discharge series are emitted in the same CSV schema as real data so
every command runs unchanged on them. Also builds constructed-weight models
whose attribution behaviour is known in closed form.
"""
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, Literal, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from dotenv import dotenv_values

from data_io import (
    DISCHARGE,
    FORCING_VARIABLES,
    DischargeSeries,
    ForcingSeries,
    NormStats,
    ProxyStateSeries,
)
from exceptions import ConfigError, DataFileError
from lstm_core import GATES, ModelParams, init_params

logger = logging.getLogger(__name__)


class ToyCatchmentConfig(BaseModel):
    """Weather regime and storage parameters of the toy catchment"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    n_days: int = Field(20 * 365, ge=730)
    start_date: date = date(1980, 10, 1)

    degree_day_factor: float = Field(3.0, gt=0.0)
    soil_recession: float = Field(0.05, gt=0.0, lt=1.0)
    et_fraction: float = Field(0.01, ge=0.0, lt=1.0)
    initial_snow: float = Field(0.0, ge=0.0)
    initial_soil: float = Field(50.0, ge=0.0)

    # temperature: seasonal cosine peaking on `temp_phase` (day of year)
    temp_mean: float = 3.0
    temp_amplitude: float = Field(10.0, ge=0.0)
    temp_phase: int = Field(200, ge=1, le=366)
    temp_noise: float = Field(2.0, ge=0.0)
    diurnal_range: float = Field(8.0, ge=0.0)

    # precipitation: wet days more frequent in the cold season
    precip_distribution: Literal["exponential", "constant"] = "exponential"
    precip_mean: float = Field(6.0, ge=0.0)
    wet_day_probability: float = Field(0.4, ge=0.0, le=1.0)
    precip_seasonality: float = Field(0.5, ge=0.0, le=1.0)

    srad_mean: float = Field(180.0, ge=0.0)
    srad_amplitude: float = Field(80.0, ge=0.0)
    srad_noise: float = Field(20.0, ge=0.0)
    vp_mean: float = Field(900.0, ge=0.0)
    vp_amplitude: float = Field(400.0, ge=0.0)
    vp_noise: float = Field(100.0, ge=0.0)

    @model_validator(mode="after")
    def _outflow_fraction(self):
        if self.soil_recession + self.et_fraction >= 1.0:
            raise ValueError("soil_recession + et_fraction must stay below 1")
        return self


def load_toy_config(path: Union[str, Path, None] = None, **overrides) -> ToyCatchmentConfig:
    values: Dict[str, object] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataFileError(f"config file not found: {path}")
        values.update({k.strip().lower(): v for k, v in dotenv_values(path, interpolate=False).items()})
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ToyCatchmentConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid toy catchment configuration: {e}")


@dataclass(frozen=True)
class ToyTrace:
    """Daily forcings, true stores (mm) and discharge (mm/day)"""
    frame: pd.DataFrame
    initial_snow: float
    initial_soil: float

    def forcings(self) -> ForcingSeries:
        return ForcingSeries(self.frame[list(FORCING_VARIABLES)].copy())

    def discharge(self) -> DischargeSeries:
        return DischargeSeries(self.frame[[DISCHARGE]].copy())

    def states(self) -> ProxyStateSeries:
        return ProxyStateSeries(self.frame[["snow", "soil"]].copy())

    def water_balance(self) -> Dict[str, float]:
        """Inputs (precip + initial stores) against outputs (discharge + ET + final stores)"""
        f = self.frame
        inputs = float(f["precip"].sum()) + self.initial_snow + self.initial_soil
        outputs = float(f[DISCHARGE].sum() + f["et"].sum() + f["snow"].iloc[-1] + f["soil"].iloc[-1])
        residual = inputs - outputs
        return {
            "inputs": inputs,
            "outputs": outputs,
            "residual": residual,
            "relative": abs(residual) / max(abs(inputs), 1e-300),
        }


def _weather(config: ToyCatchmentConfig, n_days: int) -> pd.DataFrame:
    rng = np.random.default_rng(config.seed)
    dates = pd.date_range(pd.Timestamp(config.start_date), periods=n_days, freq="D", name="date")
    doy = dates.dayofyear.to_numpy()
    season = np.cos(2.0 * np.pi * (doy - config.temp_phase) / 365.25)

    temp = config.temp_mean + config.temp_amplitude * season + config.temp_noise * rng.standard_normal(n_days)
    tmin = temp - config.diurnal_range / 2.0
    tmax = temp + config.diurnal_range / 2.0

    wet_probability = np.clip(config.wet_day_probability * (1.0 - config.precip_seasonality * season), 0.0, 1.0)
    wet = rng.random(n_days) < wet_probability
    if config.precip_distribution == "exponential":
        amounts = rng.exponential(config.precip_mean, n_days) if config.precip_mean > 0 else np.zeros(n_days)
    else:
        amounts = np.full(n_days, config.precip_mean)
    precip = np.where(wet, amounts, 0.0)

    srad = np.maximum(config.srad_mean + config.srad_amplitude * season
                      + config.srad_noise * rng.standard_normal(n_days), 0.0)
    vp = np.maximum(config.vp_mean + config.vp_amplitude * season
                    + config.vp_noise * rng.standard_normal(n_days), 0.0)
    return pd.DataFrame(
        {"precip": precip, "srad": srad, "tmin": tmin, "tmax": tmax, "vp": vp},
        index=dates,
    )


def generate(config: ToyCatchmentConfig) -> ToyTrace:
    """Run the daily snow/soil loop over seeded synthetic weather"""
    frame = _weather(config, config.n_days)
    precip = frame["precip"].to_numpy()
    tmin = frame["tmin"].to_numpy()
    tmax = frame["tmax"].to_numpy()

    n = config.n_days
    snow_store = np.empty(n)
    soil_store = np.empty(n)
    discharge = np.empty(n)
    evapotranspiration = np.empty(n)
    snow, soil = config.initial_snow, config.initial_soil
    for t in range(n):
        snowfall = precip[t] if tmin[t] < 0.0 else 0.0
        rain = precip[t] - snowfall
        snow += snowfall
        melt = min(config.degree_day_factor * max(tmax[t], 0.0), snow)
        snow -= melt
        soil += rain + melt
        q = config.soil_recession * soil
        et = config.et_fraction * soil
        soil -= q + et
        snow_store[t], soil_store[t], discharge[t], evapotranspiration[t] = snow, soil, q, et

    frame["snow"] = snow_store
    frame["soil"] = soil_store
    frame[DISCHARGE] = discharge
    frame["et"] = evapotranspiration
    trace = ToyTrace(frame, config.initial_snow, config.initial_soil)
    logger.debug("toy catchment: %d days, water balance %s", n, trace.water_balance())
    return trace


## Linear teacher task

@dataclass(frozen=True)
class LinearTask:
    forcings: ForcingSeries
    target: np.ndarray
    discharge: DischargeSeries


def trailing_sum(precip: np.ndarray, k: int) -> np.ndarray:
    """Sum of the last k days of precipitation (shorter at the series start)"""
    return pd.Series(np.asarray(precip, dtype=np.float64)).rolling(k, min_periods=1).sum().to_numpy()


def linear_teacher_task(seed: int, n_days: int, k: int) -> LinearTask:
    """Target depends on exactly the trailing k days of precipitation.

    `target` is the trailing sum z-scored over the series; `discharge` is the
    trailing mean in mm/day, ready for the data_io pipeline.
    """
    if not 1 <= k <= 365:
        raise ValueError("k must lie in 1..365")
    if n_days < k:
        raise ValueError("n_days must be at least k")
    config = ToyCatchmentConfig(seed=seed, n_days=max(n_days, 730))
    weather = _weather(config, n_days)
    sums = trailing_sum(weather["precip"].to_numpy(), k)
    target = (sums - sums.mean()) / sums.std()
    discharge = pd.DataFrame({DISCHARGE: sums / k}, index=weather.index)
    return LinearTask(ForcingSeries(weather), target, DischargeSeries(discharge))


## Constructed-weight models

def _gate_row(gate: str, cell: int, hidden: int) -> int:
    return GATES.index(gate) * hidden + cell


def memory_model_params(k: int, input_dim: int = 5, hidden: int = 10, feature: int = 0,
                        gain: float = 0.1, floor: float = 1e-6) -> ModelParams:
    """Single-cell accumulator of one input whose memory decays to `floor` after k steps.

    The forget gate is a constant f = floor**(1/k), so any input older than k
    steps reaches the output with weight below gain*floor.
    """
    forget = floor ** (1.0 / k)
    w_x = np.zeros((4 * hidden, input_dim))
    b = np.zeros(4 * hidden)
    w_x[_gate_row("g", 0, hidden), feature] = gain
    b[_gate_row("i", 0, hidden)] = 30.0
    b[_gate_row("f", 0, hidden)] = np.log(forget / (1.0 - forget))
    b[_gate_row("o", 0, hidden)] = 30.0
    w_d = np.zeros(hidden)
    w_d[0] = 1.0
    return ModelParams(w_x=w_x, w_h=np.zeros((4 * hidden, hidden)), b=b, w_d=w_d, b_d=0.0)


def shut_input_params(seed: int = 0, input_dim: int = 5, hidden: int = 10, output_bias: float = 0.5) -> ModelParams:
    """Random weights with the input gate forced shut and the forget gate open: y == b_d"""
    params = init_params(seed, input_dim, hidden)
    b = params.b.copy()
    b[_gate_row("i", 0, hidden):_gate_row("i", 0, hidden) + hidden] = -100.0
    b[_gate_row("f", 0, hidden):_gate_row("f", 0, hidden) + hidden] = 100.0
    return params.with_arrays(b=b, b_d=output_bias)


def snow_cell_params(stats: NormStats, cell: int = 0, hidden: int = 10,
                     precip_gain: float = 0.5, srad_gain: float = -0.1, sharpness: float = 5.0) -> ModelParams:
    """Cold-gated precipitation accumulator in memory cell `cell`.

    The input gate opens when tmin drops below 0 degC (`sharpness` logits per
    degree); the candidate is tanh(precip_gain*x_precip + srad_gain*x_srad) in
    normalized units, so radiation works against accumulation; the forget gate
    is nearly open. Every other cell stays 0.
    """
    input_dim = len(FORCING_VARIABLES)
    precip, srad, tmin = (FORCING_VARIABLES.index(v) for v in ("precip", "srad", "tmin"))
    (tmin_mean,), (tmin_std,) = stats.select(["tmin"])
    freezing = (0.0 - tmin_mean) / tmin_std

    w_x = np.zeros((4 * hidden, input_dim))
    b = np.zeros(4 * hidden)
    w_x[_gate_row("i", cell, hidden), tmin] = -sharpness * tmin_std
    b[_gate_row("i", cell, hidden)] = sharpness * tmin_std * freezing
    w_x[_gate_row("g", cell, hidden), precip] = precip_gain
    w_x[_gate_row("g", cell, hidden), srad] = srad_gain
    b[_gate_row("f", cell, hidden)] = 6.0
    b[_gate_row("o", cell, hidden)] = 6.0
    w_d = np.zeros(hidden)
    w_d[cell] = 1.0
    return ModelParams(w_x=w_x, w_h=np.zeros((4 * hidden, hidden)), b=b, w_d=w_d, b_d=0.0)
