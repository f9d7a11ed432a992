"""
LSTM cell recurrence, linear dense head, full-sequence forward pass and
checkpoint file I/O

Gate blocks are stacked in the order i, f, g, o: rows [0:H] of `w_x`, `w_h`
and `b` belong to the input gate, [H:2H] to the forget gate, [2H:3H] to the
cell candidate and [3H:4H] to the output gate.
"""
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import ClassVar, Dict, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from scipy.special import expit

from data_io import DEFAULT_SEQ_LEN, NormStats, SplitSpec
from exceptions import CheckpointFormatError, DataFileError, NonFiniteState, ShapeMismatch

logger = logging.getLogger(__name__)

GATES = ("i", "f", "g", "o")
CHECKPOINT_FORMAT = "lstm-rr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ParameterSet:
    """Arrays shaped like the model parameters (weights, gradients, optimizer moments)"""
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    w_d: np.ndarray
    b_d: np.ndarray

    NAMES: ClassVar[Tuple[str, ...]] = ("w_x", "w_h", "b", "w_d", "b_d")

    def __post_init__(self):
        for f in fields(self):
            array = np.array(getattr(self, f.name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, f.name, array)
        h4, d = self.w_x.shape if self.w_x.ndim == 2 else (-1, -1)
        hidden = h4 // 4
        expected = {
            "w_x": (4 * hidden, d),
            "w_h": (4 * hidden, hidden),
            "b": (4 * hidden,),
            "w_d": (hidden,),
            "b_d": (),
        }
        if hidden < 1 or d < 1 or h4 % 4:
            raise ShapeMismatch(f"w_x must be (4*hidden, input_dim), got {self.w_x.shape}")
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def hidden_size(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def count(self) -> int:
        return sum(getattr(self, name).size for name in self.NAMES)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays().values())))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    @classmethod
    def from_flat(cls, vector: np.ndarray, input_dim: int, hidden: int):
        shapes = _shapes(input_dim, hidden)
        vector = np.asarray(vector, dtype=np.float64)
        total = sum(int(np.prod(s)) for s in shapes.values())
        if vector.shape != (total,):
            raise ShapeMismatch(f"expected {total} values, got {vector.shape}")
        out, offset = {}, 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            out[name] = vector[offset:offset + size].reshape(shape)
            offset += size
        return cls(**out)

    @classmethod
    def zeros_like(cls, other: "ParameterSet"):
        return cls(**{name: np.zeros_like(a) for name, a in other.arrays().items()})

    def gate_block(self, gate: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W, U, b) of one gate: (H, D), (H, H), (H,)"""
        k = GATES.index(gate)
        rows = slice(k * self.hidden_size, (k + 1) * self.hidden_size)
        return self.w_x[rows], self.w_h[rows], self.b[rows]


def _shapes(input_dim: int, hidden: int) -> Dict[str, tuple]:
    return {
        "w_x": (4 * hidden, input_dim),
        "w_h": (4 * hidden, hidden),
        "b": (4 * hidden,),
        "w_d": (hidden,),
        "b_d": (),
    }


class ModelParams(ParameterSet):
    """LSTM gate weights and biases plus the dense head. Immutable."""

    def __post_init__(self):
        super().__post_init__()
        if not self.is_finite():
            raise ValueError("model parameters must be finite")

    def with_arrays(self, **arrays) -> "ModelParams":
        merged = self.arrays()
        merged.update(arrays)
        return ModelParams(**merged)


@dataclass(frozen=True)
class CellState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None) -> "CellState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class GateActivations:
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    """Cached activations of one unrolled sequence.

    Arrays are shaped (..., T, width) where the optional leading axis indexes
    samples of a batch; `y` is shaped (...).
    """
    x: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    y: np.ndarray

    @property
    def seq_len(self) -> int:
        return self.x.shape[-2]

    @property
    def batched(self) -> bool:
        return self.x.ndim == 3

    def c_prev(self) -> np.ndarray:
        """c_{t-1} for every t, with c_0 = 0"""
        pad = np.zeros_like(self.c[..., :1, :])
        return np.concatenate([pad, self.c[..., :-1, :]], axis=-2)

    def h_prev(self) -> np.ndarray:
        pad = np.zeros_like(self.h[..., :1, :])
        return np.concatenate([pad, self.h[..., :-1, :]], axis=-2)

    def sample(self, k: int) -> "ForwardTrace":
        if not self.batched:
            raise ValueError("trace holds a single sample")
        return ForwardTrace(**{f.name: getattr(self, f.name)[k] for f in fields(self)})


def init_params(seed: int, input_dim: int = 5, hidden: int = 10) -> ModelParams:
    """Uniform weights in +-1/sqrt(fan_in); zero biases except forget-gate bias 1"""
    if input_dim < 1 or hidden < 1:
        raise ValueError("input_dim and hidden must be >= 1")
    rng = np.random.default_rng(seed)
    limit_x = 1.0 / np.sqrt(input_dim)
    limit_h = 1.0 / np.sqrt(hidden)
    w_x = rng.uniform(-limit_x, limit_x, size=(4 * hidden, input_dim))
    w_h = rng.uniform(-limit_h, limit_h, size=(4 * hidden, hidden))
    w_d = rng.uniform(-limit_h, limit_h, size=hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return ModelParams(w_x=w_x, w_h=w_h, b=b, w_d=w_d, b_d=0.0)


def _activate(z: np.ndarray, hidden: int) -> GateActivations:
    return GateActivations(
        i=expit(z[..., :hidden]),
        f=expit(z[..., hidden:2 * hidden]),
        g=np.tanh(z[..., 2 * hidden:3 * hidden]),
        o=expit(z[..., 3 * hidden:]),
    )


def lstm_step(x_t: np.ndarray, prev: CellState, params: ModelParams) -> Tuple[CellState, GateActivations]:
    """One step of the forget-gate LSTM (no peepholes)"""
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.asarray(x_t, dtype=np.float64) @ params.w_x.T + prev.h @ params.w_h.T + params.b
        gates = _activate(z, params.hidden_size)
        c = gates.f * prev.c + gates.i * gates.g
        h = gates.o * np.tanh(c)
    if not (np.isfinite(c).all() and np.isfinite(h).all()):
        raise NonFiniteState("non-finite LSTM state")
    return CellState(c, h), gates


def _check_inputs(inputs: np.ndarray, params: ParameterSet, ndim: int) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != ndim or inputs.shape[-1] != params.input_dim or inputs.shape[-2] < 1:
        raise ShapeMismatch(
            f"inputs of shape {inputs.shape} do not match a model with input_dim={params.input_dim}"
        )
    return inputs


def forward_batch(inputs: np.ndarray, params: ModelParams) -> ForwardTrace:
    """Unroll (B, T, D) inputs from c_0 = h_0 = 0 and cache every activation"""
    inputs = _check_inputs(inputs, params, 3)
    batch, seq_len, _ = inputs.shape
    hidden = params.hidden_size
    shape = (batch, seq_len, hidden)
    i, f, g, o, c, h = (np.empty(shape) for _ in range(6))

    with np.errstate(over="ignore", invalid="ignore"):
        projected = inputs @ params.w_x.T + params.b
        c_t = np.zeros((batch, hidden))
        h_t = np.zeros((batch, hidden))
        for t in range(seq_len):
            gates = _activate(projected[:, t] + h_t @ params.w_h.T, hidden)
            c_t = gates.f * c_t + gates.i * gates.g
            h_t = gates.o * np.tanh(c_t)
            i[:, t], f[:, t], g[:, t], o[:, t] = gates.i, gates.f, gates.g, gates.o
            c[:, t], h[:, t] = c_t, h_t
        y = h_t @ params.w_d + params.b_d

    finite = np.isfinite(c).all(axis=(0, 2)) & np.isfinite(h).all(axis=(0, 2))
    if not finite.all():
        step = int(np.argmin(finite)) + 1
        raise NonFiniteState(f"non-finite LSTM state at timestep {step}", timestep=step)
    return ForwardTrace(x=inputs, i=i, f=f, g=g, o=o, c=c, h=h, y=y)


def forward(inputs: np.ndarray, params: ModelParams) -> ForwardTrace:
    """Forward pass of one (T, D) sequence; y = w_d . h_T + b_d"""
    inputs = _check_inputs(inputs, params, 2)
    return forward_batch(inputs[None], params).sample(0)


def predict(params: ModelParams, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Network output for (N, T, D) inputs without keeping the trace"""
    inputs = _check_inputs(inputs, params, 3)
    hidden = params.hidden_size
    outputs = np.empty(inputs.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, inputs.shape[0], batch_size):
            chunk = inputs[start:start + batch_size]
            projected = chunk @ params.w_x.T + params.b
            c_t = np.zeros((chunk.shape[0], hidden))
            h_t = np.zeros_like(c_t)
            for t in range(chunk.shape[1]):
                gates = _activate(projected[:, t] + h_t @ params.w_h.T, hidden)
                c_t = gates.f * c_t + gates.i * gates.g
                h_t = gates.o * np.tanh(c_t)
            outputs[start:start + chunk.shape[0]] = h_t @ params.w_d + params.b_d
    if not np.isfinite(outputs).all():
        raise NonFiniteState("non-finite network output")
    return outputs


## Checkpoints

@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    seq_len: int = DEFAULT_SEQ_LEN
    stats: Optional[NormStats] = None
    split: Optional[SplitSpec] = None


def _format_values(array: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(array))


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    seq_len: int = DEFAULT_SEQ_LEN,
    stats: Optional[NormStats] = None,
    split: Optional[SplitSpec] = None,
) -> Path:
    """Write a KEY=VALUE text checkpoint; matrices row-major, floats in round-trip repr"""
    lines = [
        f"format={CHECKPOINT_FORMAT}",
        f"version={CHECKPOINT_VERSION}",
        f"input_dim={params.input_dim}",
        f"hidden={params.hidden_size}",
        f"seq_len={seq_len}",
    ]
    lines += [f"{name}={_format_values(array)}" for name, array in params.arrays().items()]
    if stats is not None:
        lines += [
            f"norm_variables={' '.join(stats.variables)}",
            f"norm_mean={_format_values(stats.mean)}",
            f"norm_std={_format_values(stats.std)}",
        ]
    if split is not None:
        lines += [
            f"split_train_years={split.train_years}",
            f"split_val_fraction={split.val_fraction_of_remainder!r}",
        ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _floats(values: Dict[str, Optional[str]], key: str, count: int, path: Path) -> np.ndarray:
    raw = values.get(key)
    if raw is None:
        raise CheckpointFormatError(f"{path}: missing '{key}'")
    try:
        parsed = np.array([float(v) for v in raw.split()], dtype=np.float64)
    except ValueError:
        raise CheckpointFormatError(f"{path}: '{key}' holds non-numeric values")
    if parsed.size != count:
        raise CheckpointFormatError(f"{path}: '{key}' has {parsed.size} values, expected {count}")
    if not np.isfinite(parsed).all():
        raise CheckpointFormatError(f"{path}: '{key}' holds non-finite values")
    return parsed


def _integer(values: Dict[str, Optional[str]], key: str, path: Path) -> int:
    try:
        return int(values[key])
    except (KeyError, TypeError, ValueError):
        raise CheckpointFormatError(f"{path}: missing or invalid '{key}'")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"checkpoint not found: {path}")
    values = dotenv_values(path, interpolate=False)
    if values.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if _integer(values, "version", path) != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {values.get('version')}")
    input_dim = _integer(values, "input_dim", path)
    hidden = _integer(values, "hidden", path)
    seq_len = _integer(values, "seq_len", path)
    if input_dim < 1 or hidden < 1 or seq_len < 1:
        raise CheckpointFormatError(f"{path}: dimensions must be positive")

    arrays = {
        name: _floats(values, name, int(np.prod(shape)), path).reshape(shape)
        for name, shape in _shapes(input_dim, hidden).items()
    }
    params = ModelParams(**arrays)

    stats = None
    if "norm_variables" in values:
        variables = tuple((values["norm_variables"] or "").split())
        stats = NormStats(
            variables,
            _floats(values, "norm_mean", len(variables), path),
            _floats(values, "norm_std", len(variables), path),
        )
    split = None
    if "split_train_years" in values:
        try:
            split = SplitSpec(
                train_years=_integer(values, "split_train_years", path),
                val_fraction_of_remainder=float(values.get("split_val_fraction") or "nan"),
            )
        except ValueError as e:
            raise CheckpointFormatError(f"{path}: invalid split settings: {e}")
    logger.debug("loaded checkpoint %s (input_dim=%d, hidden=%d)", path, input_dim, hidden)
    return Checkpoint(params=params, seq_len=seq_len, stats=stats, split=split)
