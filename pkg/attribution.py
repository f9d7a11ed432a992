"""
Integrated-gradients attribution of the network output or a memory cell
to the input sequence

The path integral from the baseline x' to the input x is approximated by a
right-endpoint Riemann sum with k = 1..m. Inputs and baseline live in
normalized space, so the default all-zeros baseline corresponds to
climatological-mean forcings in physical units.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from data_io import FORCING_VARIABLES, NormStats, normalize, write_csv
from exceptions import NonFiniteGradient, ShapeMismatch
from grad_engine import Target, grad_wrt_inputs
from lstm_core import ModelParams, forward_batch

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 1000


@dataclass(frozen=True)
class Baseline:
    values: np.ndarray
    description: str = "custom"

    @classmethod
    def zeros(cls, seq_len: int, input_dim: int = len(FORCING_VARIABLES)) -> "Baseline":
        return cls(np.zeros((seq_len, input_dim)), "zeros")

    @classmethod
    def physical_zero(cls, stats: NormStats, seq_len: int, variables: Sequence[str]) -> "Baseline":
        """Zeros, except `variables` held at 0 in physical units (no rain, no radiation)"""
        values = np.zeros((seq_len, len(FORCING_VARIABLES)))
        for name in variables:
            values[:, FORCING_VARIABLES.index(name)] = normalize(np.zeros(1), stats, [name])[0]
        return cls(values, "zero " + "+".join(variables))


@dataclass(frozen=True)
class AttributionMatrix:
    """(T, D) integrated gradients for one sample and one target"""
    values: np.ndarray
    target: Target
    baseline: str
    m: int
    residual: float
    delta: float

    @property
    def step_totals(self) -> np.ndarray:
        """Signed attribution summed across input variables, per timestep"""
        return self.values.sum(axis=1)

    def to_frame(self, dates: Optional[Sequence] = None,
                 variables: Sequence[str] = FORCING_VARIABLES) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(variables))
        frame.insert(0, "timestep", np.arange(1, len(frame) + 1))
        if dates is not None:
            frame.insert(1, "date", pd.DatetimeIndex(dates))
        return frame

    def to_csv(self, path: Union[str, Path], dates: Optional[Sequence] = None) -> Path:
        return write_csv(self.to_frame(dates), path)


GradFn = Callable[[np.ndarray], np.ndarray]


def integrate_path(grad_fn: GradFn, x: np.ndarray, baseline: np.ndarray, m: int = DEFAULT_STEPS,
                   chunk_size: int = 250) -> np.ndarray:
    """(x - x')/m * sum_{k=1..m} grad F(x' + k/m (x - x')).

    `grad_fn` maps a stack of path points (K, *x.shape) to their gradients.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise ShapeMismatch(f"input {x.shape} and baseline {baseline.shape} differ")

    difference = x - baseline
    total = np.zeros_like(x)
    expand = (-1,) + (1,) * x.ndim
    for start in range(1, m + 1, chunk_size):
        alphas = np.arange(start, min(start + chunk_size, m + 1)) / m
        points = baseline + alphas.reshape(expand) * difference
        total += np.asarray(grad_fn(points)).sum(axis=0)
    return difference * total / m


def _target_delta(params: ModelParams, x: np.ndarray, baseline: np.ndarray, target: Target) -> float:
    values = target.value(forward_batch(np.stack([x, baseline]), params))
    return float(values[0] - values[1])


def integrated_gradients(
    params: ModelParams,
    x: np.ndarray,
    baseline: Optional[Baseline] = None,
    target: Target = Target.output(),
    m: int = DEFAULT_STEPS,
    chunk_size: int = 250,
) -> AttributionMatrix:
    x = np.asarray(x, dtype=np.float64)
    if baseline is None:
        baseline = Baseline.zeros(*x.shape)
    target.validate(params)

    values = integrate_path(lambda points: grad_wrt_inputs(params, points, target), x, baseline.values, m, chunk_size)
    if not np.isfinite(values).all():
        raise NonFiniteGradient(f"non-finite attribution for target {target.describe()}")
    delta = _target_delta(params, x, baseline.values, target)
    residual = abs(float(values.sum()) - delta)
    logger.debug("IG %s: m=%d, residual %.3g of delta %.3g", target.describe(), m, residual, delta)
    return AttributionMatrix(values, target, baseline.description, m, residual, delta)


def completeness_residual(attr: AttributionMatrix, params: ModelParams, x: np.ndarray,
                          baseline: Baseline, target: Target) -> float:
    """|sum IG - (F(x) - F(x'))|"""
    delta = _target_delta(params, np.asarray(x, dtype=np.float64), baseline.values, target)
    return abs(float(attr.values.sum()) - delta)
