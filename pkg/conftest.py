"""
Shared pytest fixtures; long end-to-end runs are marked `slow`
(deselect with -m "not slow")
"""
import numpy as np
import pandas as pd
import pytest

from data_io import DISCHARGE, FORCING_VARIABLES, DischargeSeries, ForcingSeries, NormStats, NORM_VARIABLES
from lstm_core import init_params
from synthetic import ToyCatchmentConfig, generate


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (minutes)")


@pytest.fixture(scope="session")
def toy_trace():
    """Six-year snowy toy catchment"""
    return generate(ToyCatchmentConfig(seed=7, n_days=6 * 365))


@pytest.fixture
def small_params():
    return init_params(seed=3, input_dim=5, hidden=4)


@pytest.fixture
def unit_stats():
    """Identity normalization: mean 0, std 1 for every variable"""
    n = len(NORM_VARIABLES)
    return NormStats(NORM_VARIABLES, np.zeros(n), np.ones(n))


def make_forcings(n_days: int, start: str = "2000-01-01", seed: int = 0) -> ForcingSeries:
    rng = np.random.default_rng(seed)
    dates = pd.date_range(start, periods=n_days, freq="D", name="date")
    tmin = rng.normal(2.0, 5.0, n_days)
    frame = pd.DataFrame({
        "precip": rng.exponential(3.0, n_days),
        "srad": rng.uniform(50.0, 300.0, n_days),
        "tmin": tmin,
        "tmax": tmin + rng.uniform(2.0, 10.0, n_days),
        "vp": rng.uniform(300.0, 1500.0, n_days),
    }, index=dates)
    return ForcingSeries(frame[list(FORCING_VARIABLES)])


def make_discharge(forcings: ForcingSeries, seed: int = 1) -> DischargeSeries:
    rng = np.random.default_rng(seed)
    q = forcings.frame["precip"].rolling(5, min_periods=1).mean() + rng.uniform(0.0, 0.1, len(forcings))
    return DischargeSeries(pd.DataFrame({DISCHARGE: q.to_numpy()}, index=forcings.dates))


@pytest.fixture
def forcings_factory():
    return make_forcings


@pytest.fixture
def discharge_factory():
    return make_discharge
