"""
Hydrological evaluation metrics
"""
from typing import NewType

import numpy as np

from exceptions import ConstantObservations, LengthMismatch, NonFiniteValue

NseValue = NewType("NseValue", float)


def nse(simulated, observed) -> NseValue:
    """Nash-Sutcliffe efficiency over one sequence.

    1 - sum((Q_m - Q_o)^2) / sum((Q_o - mean(Q_o))^2); 1 is a perfect
    simulation, 0 is as good as the observed mean.
    """
    simulated = np.asarray(simulated, dtype=np.float64).ravel()
    observed = np.asarray(observed, dtype=np.float64).ravel()
    if simulated.shape != observed.shape:
        raise LengthMismatch(f"{simulated.size} simulated vs {observed.size} observed values")
    if observed.size < 2:
        raise LengthMismatch("NSE needs at least two time steps")
    if not (np.isfinite(simulated).all() and np.isfinite(observed).all()):
        raise NonFiniteValue("NSE inputs must be finite")

    denominator = np.sum((observed - observed.mean()) ** 2)
    if denominator == 0.0:
        raise ConstantObservations("observed discharge is constant; NSE is undefined")
    numerator = np.sum((simulated - observed) ** 2)
    return NseValue(float(1.0 - numerator / denominator))


def snow_fraction(precip, tmin, tmax) -> float:
    """Fraction of precipitation falling on days with mean temperature below 0 degC"""
    precip = np.asarray(precip, dtype=np.float64)
    mean_temp = (np.asarray(tmin, dtype=np.float64) + np.asarray(tmax, dtype=np.float64)) / 2.0
    total = precip.sum()
    if total <= 0.0:
        return 0.0
    return float(precip[mean_temp < 0.0].sum() / total)
