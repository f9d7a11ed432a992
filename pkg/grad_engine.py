"""
Backpropagation through time over a cached ForwardTrace

Two scalar target families are supported: the network output y and a single
memory cell c_j at the last timestep. Gradients are available with respect to
the inputs (for attribution) and with respect to the parameters (for training).
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from exceptions import LengthMismatch, NonFiniteGradient, ShapeMismatch
from lstm_core import ForwardTrace, ModelParams, ParameterSet, forward_batch

logger = logging.getLogger(__name__)


class ParamGradient(ParameterSet):
    """dLoss/dtheta, shaped exactly like ModelParams"""


@dataclass(frozen=True)
class Target:
    """Scalar the gradient is taken of: the output neuron or cell j at t = T"""
    kind: str = "output"
    cell: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("output", "cell"):
            raise ValueError(f"unknown target kind '{self.kind}'")
        if (self.kind == "cell") != (self.cell is not None):
            raise ValueError("a cell index is required exactly for cell targets")

    @classmethod
    def output(cls) -> "Target":
        return cls("output")

    @classmethod
    def memory_cell(cls, j: int) -> "Target":
        return cls("cell", int(j))

    def describe(self) -> str:
        return "output" if self.kind == "output" else f"cell{self.cell}"

    def validate(self, params: ParameterSet) -> None:
        if self.kind == "cell" and not 0 <= self.cell < params.hidden_size:
            raise ShapeMismatch(f"cell index {self.cell} outside 0..{params.hidden_size - 1}")

    def value(self, trace: ForwardTrace) -> np.ndarray:
        """F for every sample of the trace"""
        if self.kind == "output":
            return trace.y
        return trace.c[..., -1, self.cell]


def _backward(
    trace: ForwardTrace,
    params: ModelParams,
    dh_last: np.ndarray,
    dc_last: np.ndarray,
    want_params: bool,
) -> Tuple[np.ndarray, Optional[dict]]:
    """Reverse accumulation over a batched trace.

    dh_last, dc_last: (B, H) seeds for dF/dh_T and dF/dc_T.
    Returns dF/dx of shape (B, T, D) and, if requested, summed w_x/w_h/b grads.
    """
    batch, seq_len, _ = trace.x.shape
    hidden = params.hidden_size
    d_inputs = np.empty_like(trace.x)
    c_prev = trace.c_prev()
    h_prev = trace.h_prev()
    tanh_c = np.tanh(trace.c)

    grads = None
    if want_params:
        grads = {
            "w_x": np.zeros_like(params.w_x),
            "w_h": np.zeros_like(params.w_h),
            "b": np.zeros_like(params.b),
        }

    dh = dh_last.copy()
    dc = dc_last.copy()
    dz = np.empty((batch, 4 * hidden))
    for t in range(seq_len - 1, -1, -1):
        i, f, g, o = trace.i[:, t], trace.f[:, t], trace.g[:, t], trace.o[:, t]
        tc = tanh_c[:, t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :hidden] = dc * g * i * (1.0 - i)
        dz[:, hidden:2 * hidden] = dc * c_prev[:, t] * f * (1.0 - f)
        dz[:, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
        dz[:, 3 * hidden:] = dh * tc * o * (1.0 - o)

        d_inputs[:, t] = dz @ params.w_x
        if grads is not None:
            grads["w_x"] += dz.T @ trace.x[:, t]
            grads["w_h"] += dz.T @ h_prev[:, t]
            grads["b"] += dz.sum(axis=0)
        dh = dz @ params.w_h
        dc = dc * f
    return d_inputs, grads


def _seeds(trace: ForwardTrace, params: ModelParams, target: Target) -> Tuple[np.ndarray, np.ndarray]:
    batch = trace.x.shape[0]
    hidden = params.hidden_size
    dh = np.zeros((batch, hidden))
    dc = np.zeros((batch, hidden))
    if target.kind == "output":
        dh[:] = params.w_d
    else:
        dc[:, target.cell] = 1.0
    return dh, dc


def grad_wrt_inputs(params: ModelParams, inputs: np.ndarray, target: Target = Target.output()) -> np.ndarray:
    """dF/dx for one (T, D) sample or a (B, T, D) batch of samples"""
    target.validate(params)
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 2
    trace = forward_batch(inputs[None] if single else inputs, params)
    dh, dc = _seeds(trace, params, target)
    d_inputs, _ = _backward(trace, params, dh, dc, want_params=False)
    if not np.isfinite(d_inputs).all():
        raise NonFiniteGradient(f"non-finite input gradient for target {target.describe()}")
    return d_inputs[0] if single else d_inputs


def grad_wrt_params(
    params: ModelParams,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> Tuple[float, ParamGradient]:
    """Batch-mean squared error and its gradient over every parameter.

    inputs: (B, T, D); targets: (B,).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ShapeMismatch("grad_wrt_params needs a non-empty (B, T, D) batch")
    if targets.shape != (inputs.shape[0],):
        raise LengthMismatch(f"{inputs.shape[0]} samples but {targets.shape} targets")

    trace = forward_batch(inputs, params)
    batch = inputs.shape[0]
    residual = trace.y - targets
    loss = float(np.mean(residual * residual))
    dy = 2.0 * residual / batch

    h_last = trace.h[:, -1]
    dh = dy[:, None] * params.w_d
    dc = np.zeros_like(dh)
    _, grads = _backward(trace, params, dh, dc, want_params=True)
    grads["w_d"] = dy @ h_last
    grads["b_d"] = np.sum(dy)

    gradient = ParamGradient(**grads)
    if not (np.isfinite(loss) and gradient.is_finite()):
        raise NonFiniteGradient("non-finite parameter gradient")
    return loss, gradient
