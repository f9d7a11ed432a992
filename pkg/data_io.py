"""
Forcing, discharge and proxy-state CSV I/O, normalization, sample windows
and chronological train/validation/test splits
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from exceptions import (
    DataFileError,
    DateMismatch,
    InvalidDate,
    MissingColumn,
    NegativeValue,
    NonContiguousDates,
    NonFiniteValue,
    SeriesTooShort,
    SpanTooShort,
    TminAboveTmax,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

FORCING_VARIABLES = ("precip", "srad", "tmin", "tmax", "vp")
DISCHARGE = "discharge"
NORM_VARIABLES = FORCING_VARIABLES + (DISCHARGE,)
NONNEGATIVE = ("precip", "srad", "vp", DISCHARGE)

DEFAULT_SEQ_LEN = 365

PathLike = Union[str, Path]


## Domain types

@dataclass(frozen=True)
class ForcingRecord:
    date: pd.Timestamp
    precip: float
    srad: float
    tmin: float
    tmax: float
    vp: float


@dataclass(frozen=True)
class DischargeRecord:
    date: pd.Timestamp
    discharge: float


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar-day range"""
    start: pd.Timestamp
    end: pd.Timestamp

    @property
    def days(self) -> int:
        return (self.end - self.start).days + 1

    def contains(self, other: "DateRange") -> bool:
        return self.start <= other.start and other.end <= self.end

    def __str__(self) -> str:
        return f"{self.start:%Y-%m-%d}..{self.end:%Y-%m-%d}"


@dataclass(frozen=True)
class _DatedTable:
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.frame.index

    @property
    def date_range(self) -> DateRange:
        return DateRange(self.frame.index[0], self.frame.index[-1])


class ForcingSeries(_DatedTable):
    """Daily precip, srad, tmin, tmax and vp of one basin"""

    def records(self) -> Iterator[ForcingRecord]:
        for day, row in zip(self.frame.index, self.frame.itertuples(index=False)):
            yield ForcingRecord(day, *map(float, row))


class DischargeSeries(_DatedTable):
    """Daily basin-area-normalized discharge in mm/day"""

    def records(self) -> Iterator[DischargeRecord]:
        for day, value in self.frame[DISCHARGE].items():
            yield DischargeRecord(day, float(value))


class ProxyStateSeries(_DatedTable):
    """Daily hydrological storages (mm) used as correlation references"""

    @property
    def state_names(self) -> List[str]:
        return list(self.frame.columns)


class SplitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_years: int = Field(15, ge=1)
    val_fraction_of_remainder: float = Field(0.25, gt=0.0, lt=1.0)


@dataclass(frozen=True)
class NormStats:
    """Per-variable mean and population std of the training period"""
    variables: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (len(self.variables),) or std.shape != mean.shape:
            raise ValueError("mean/std must have one entry per variable")
        for name, m, s in zip(self.variables, mean, std):
            if not (np.isfinite(m) and np.isfinite(s)):
                raise ZeroVariance(f"non-finite statistics for '{name}'")
            if s <= 1e-12 * max(1.0, abs(m)):
                raise ZeroVariance(f"'{name}' is constant over the training period")
        object.__setattr__(self, "variables", tuple(self.variables))
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def select(self, names: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        try:
            idx = [self.variables.index(n) for n in names]
        except ValueError as e:
            raise KeyError(f"no statistics for variable: {e}") from None
        return self.mean[idx], self.std[idx]


@dataclass(frozen=True)
class Sample:
    inputs: np.ndarray
    target: Optional[float]
    prediction_date: pd.Timestamp


@dataclass(frozen=True)
class SampleSet:
    """Stacked samples: inputs (N, seq_len, 5), targets (N,) or None"""
    inputs: np.ndarray
    targets: Optional[np.ndarray]
    dates: pd.DatetimeIndex

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, k: int) -> Sample:
        target = None if self.targets is None else float(self.targets[k])
        return Sample(self.inputs[k], target, self.dates[k])

    def __iter__(self) -> Iterator[Sample]:
        for k in range(len(self)):
            yield self[k]

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index: np.ndarray) -> "SampleSet":
        targets = None if self.targets is None else self.targets[index]
        return SampleSet(self.inputs[index], targets, self.dates[index])

    def index_of(self, day) -> int:
        day = pd.Timestamp(day)
        hits = np.flatnonzero(self.dates == day)
        if hits.size == 0:
            raise KeyError(f"no sample predicts {day:%Y-%m-%d}")
        return int(hits[0])


## Parsing

def _read_table(path: PathLike, required: Sequence[str], what: str) -> pd.DataFrame:
    """Read a dated CSV and validate dates and numeric values.

    Returns a float DataFrame indexed by date with the value columns in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"{what} file not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise MissingColumn(f"{path} is empty, expected header 'date,{','.join(required)}'", line=1)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise DataFileError(f"could not read {what} file {path}: {e}")

    raw.columns = [str(c).strip() for c in raw.columns]
    for column in ("date", *required):
        if column not in raw.columns:
            raise MissingColumn(f"{path}: missing column '{column}'", line=1)

    value_columns = list(required) if required else [c for c in raw.columns if c != "date"]
    if not value_columns:
        raise MissingColumn(f"{path}: no value columns after 'date'", line=1)

    dates = pd.to_datetime(raw["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise InvalidDate(f"{path}: invalid ISO-8601 date '{raw['date'].iloc[row]}'", line=row + 2)

    steps = dates.diff().dt.days.to_numpy()[1:]
    bad = np.flatnonzero(steps != 1)
    if bad.size:
        row = int(bad[0]) + 1
        raise NonContiguousDates(
            f"{path}: {dates.iloc[row]:%Y-%m-%d} does not follow {dates.iloc[row - 1]:%Y-%m-%d}",
            line=row + 2,
        )

    values = np.empty((len(raw), len(value_columns)), dtype=np.float64)
    for j, column in enumerate(value_columns):
        values[:, j] = pd.to_numeric(raw[column].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
    finite = np.isfinite(values)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise NonFiniteValue(
            f"{path}: '{value_columns[col]}' value '{raw[value_columns[col]].iloc[row]}' is not a finite number",
            line=int(row) + 2,
        )

    frame = pd.DataFrame(values, index=pd.DatetimeIndex(dates, name="date"), columns=value_columns)
    _check_nonnegative(frame, path)
    return frame


def _check_nonnegative(frame: pd.DataFrame, path: Path, columns: Optional[Sequence[str]] = None) -> None:
    columns = [c for c in frame.columns if c in NONNEGATIVE] if columns is None else list(columns)
    for column in columns:
        negative = np.flatnonzero(frame[column].to_numpy() < 0)
        if negative.size:
            row = int(negative[0])
            raise NegativeValue(f"{path}: '{column}' is negative ({frame[column].iloc[row]!r})", line=row + 2)


def parse_forcings(path: PathLike) -> ForcingSeries:
    """Parse a `date,precip,srad,tmin,tmax,vp` CSV"""
    frame = _read_table(path, FORCING_VARIABLES, "forcing")
    inverted = np.flatnonzero(frame["tmin"].to_numpy() > frame["tmax"].to_numpy())
    if inverted.size:
        row = int(inverted[0])
        raise TminAboveTmax(
            f"{path}: tmin {frame['tmin'].iloc[row]!r} exceeds tmax {frame['tmax'].iloc[row]!r}",
            line=row + 2,
        )
    logger.debug("parsed %d forcing records from %s", len(frame), path)
    return ForcingSeries(frame)


def parse_discharge(path: PathLike) -> DischargeSeries:
    """Parse a `date,discharge` CSV (mm/day)"""
    frame = _read_table(path, (DISCHARGE,), "discharge")
    return DischargeSeries(frame)


def parse_states(path: PathLike) -> ProxyStateSeries:
    """Parse a `date,<state_1>,...,<state_K>` CSV (mm)"""
    frame = _read_table(path, (), "state")
    _check_nonnegative(frame, Path(path), frame.columns)
    return ProxyStateSeries(frame)


## Serialization

def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Byte-deterministic CSV: floats in shortest round-trip repr, NaN as empty, ISO dates, flags as 0/1"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = frame.select_dtypes(include="bool").columns
    frame.astype({column: int for column in flags}).to_csv(
        path, index=False, na_rep="", date_format="%Y-%m-%d", lineterminator="\n", encoding="utf-8",
    )
    return path


def _write_table(frame: pd.DataFrame, path: PathLike) -> Path:
    return write_csv(frame.reset_index(), path)


def write_forcings(series: ForcingSeries, path: PathLike) -> Path:
    return _write_table(series.frame[list(FORCING_VARIABLES)], path)


def write_discharge(series: DischargeSeries, path: PathLike) -> Path:
    return _write_table(series.frame[[DISCHARGE]], path)


def write_states(series: ProxyStateSeries, path: PathLike) -> Path:
    return _write_table(series.frame, path)


def align(forcings: ForcingSeries, other: _DatedTable, what: str = "discharge") -> None:
    """Require `other` to cover exactly the forcing dates"""
    if len(forcings) == len(other) and forcings.dates.equals(other.dates):
        return
    missing = forcings.dates.difference(other.dates)
    extra = other.dates.difference(forcings.dates)
    if len(missing):
        raise DateMismatch(f"{what} has no value for {missing[0]:%Y-%m-%d}")
    raise DateMismatch(f"{what} has a value for {extra[0]:%Y-%m-%d} outside the forcing dates")


## Normalization

def _slice(table: _DatedTable, period: DateRange, what: str) -> pd.DataFrame:
    if not table.date_range.contains(period):
        raise SeriesTooShort(f"{what} ({table.date_range}) does not cover {period}")
    return table.frame.loc[period.start:period.end]


def compute_norm_stats(forcings: ForcingSeries, discharge: DischargeSeries, train_range: DateRange) -> NormStats:
    """Mean and population standard deviation of every variable over `train_range` only"""
    if train_range.days < 1:
        raise SeriesTooShort("empty training range")
    x = _slice(forcings, train_range, "forcings")[list(FORCING_VARIABLES)].to_numpy()
    q = _slice(discharge, train_range, "discharge")[[DISCHARGE]].to_numpy()
    values = np.concatenate([x, q], axis=1)
    return NormStats(NORM_VARIABLES, values.mean(axis=0), values.std(axis=0, ddof=0))


def normalize(data: Union[pd.DataFrame, np.ndarray], stats: NormStats, variables: Optional[Sequence[str]] = None):
    """(x - mean) / std per variable; DataFrame columns name the variables"""
    if isinstance(data, pd.DataFrame):
        mean, std = stats.select(list(data.columns))
        return (data - mean) / std
    mean, std = stats.select(list(variables) if variables is not None else list(stats.variables))
    return (np.asarray(data, dtype=np.float64) - mean) / std


def denormalize(data: Union[pd.DataFrame, np.ndarray], stats: NormStats, variables: Optional[Sequence[str]] = None):
    """Exact inverse of `normalize`"""
    if isinstance(data, pd.DataFrame):
        mean, std = stats.select(list(data.columns))
        return data * std + mean
    mean, std = stats.select(list(variables) if variables is not None else list(stats.variables))
    return np.asarray(data, dtype=np.float64) * std + mean


## Samples and splits

def make_samples(
    forcings: ForcingSeries,
    discharge: Optional[DischargeSeries],
    stats: NormStats,
    seq_len: int = DEFAULT_SEQ_LEN,
    period: Optional[DateRange] = None,
) -> SampleSet:
    """Slide a `seq_len`-day window over the forcings.

    Sample k predicts day k + seq_len - 1 of the (period-restricted) series. When
    `period` is given, only windows lying entirely inside it are produced.
    """
    frame = forcings.frame if period is None else _slice(forcings, period, "forcings")
    n = len(frame)
    if n < seq_len:
        span = "series" if period is None else f"period {period}"
        raise SeriesTooShort(f"{span} has {n} days, need at least {seq_len}")

    x = normalize(frame[list(FORCING_VARIABLES)], stats).to_numpy(dtype=np.float64)
    windows = sliding_window_view(x, seq_len, axis=0)
    inputs = np.ascontiguousarray(windows.transpose(0, 2, 1))
    dates = frame.index[seq_len - 1:]

    targets = None
    if discharge is not None:
        q = discharge.frame[DISCHARGE].reindex(dates)
        if q.isna().any():
            missing = q.index[q.isna().to_numpy()][0]
            raise DateMismatch(f"discharge has no value for {missing:%Y-%m-%d}")
        targets = normalize(q.to_numpy(), stats, (DISCHARGE,))
    return SampleSet(inputs, targets, dates)


def split_periods(series_range: DateRange, spec: SplitSpec = SplitSpec()) -> Tuple[DateRange, DateRange, DateRange]:
    """First `train_years` calendar years train; the first fraction of the
    remaining days validates; the rest tests"""
    one_day = pd.Timedelta(days=1)
    train_end = series_range.start + pd.DateOffset(years=spec.train_years) - one_day
    remainder = (series_range.end - train_end).days
    val_days = int(math.floor(remainder * spec.val_fraction_of_remainder))
    if remainder < 2 or val_days < 1 or val_days >= remainder:
        raise SpanTooShort(
            f"{series_range} ({series_range.days} days) is too short for {spec.train_years} training years "
            f"plus validation and test periods"
        )
    train = DateRange(series_range.start, train_end)
    val = DateRange(train_end + one_day, train_end + val_days * one_day)
    test = DateRange(val.end + one_day, series_range.end)
    return train, val, test
