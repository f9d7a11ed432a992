"""
RMSprop training of the LSTM on mean squared error with validation-NSE
model selection
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from data_io import DISCHARGE, DEFAULT_SEQ_LEN, NormStats, SampleSet, SplitSpec, denormalize
from exceptions import (
    ConfigError,
    DataFileError,
    DivergedTraining,
    LengthMismatch,
    NonFiniteGradient,
    NonFiniteState,
    SeriesTooShort,
)
from grad_engine import grad_wrt_params
from lstm_core import ModelParams, ParameterSet, init_params, predict
from metrics import nse

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Training hyperparameters; defaults: 50 epochs of RMSprop at 1e-2, 10 units, 365-day windows"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(1e-2, gt=0.0)
    rmsprop_decay: float = Field(0.9, gt=0.0, lt=1.0)
    rmsprop_epsilon: float = Field(1e-7, gt=0.0)
    batch_size: int = Field(256, ge=1)
    seed: int = 0
    gradient_clip_norm: Optional[float] = Field(1.0, gt=0.0)
    hidden_size: int = Field(10, ge=1)
    seq_len: int = Field(DEFAULT_SEQ_LEN, ge=1)
    show_progress: bool = True


SPLIT_KEYS = {"train_years", "val_fraction_of_remainder"}


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, object]] = None,
) -> Tuple[TrainConfig, SplitSpec]:
    """Read a flat KEY=VALUE file into TrainConfig and SplitSpec.

    Keys mirror the model field names; `overrides` (e.g. CLI flags) win over the file.
    """
    values: Dict[str, object] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataFileError(f"config file not found: {path}")
        values.update({k.strip().lower(): v for k, v in dotenv_values(path, interpolate=False).items()})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if values.get("gradient_clip_norm") in ("", "none", "None"):
        values["gradient_clip_norm"] = None

    split_values = {k: v for k, v in values.items() if k in SPLIT_KEYS}
    train_values = {k: v for k, v in values.items() if k not in SPLIT_KEYS}
    try:
        return TrainConfig(**train_values), SplitSpec(**split_values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")


def mse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.shape != targets.shape or predictions.size == 0:
        raise LengthMismatch(f"{predictions.size} predictions vs {targets.size} targets")
    return float(np.mean((predictions - targets) ** 2))


@dataclass(frozen=True)
class RmspropState:
    """Running mean of squared gradients, one array per parameter"""
    v: ParameterSet
    steps: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> "RmspropState":
        return cls(ParameterSet.zeros_like(params))


def clip_by_global_norm(grads: ParameterSet, max_norm: Optional[float]) -> ParameterSet:
    if max_norm is None:
        return grads
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return type(grads)(**{name: a * scale for name, a in grads.arrays().items()})


def rmsprop_step(
    params: ModelParams,
    grads: ParameterSet,
    state: RmspropState,
    config: TrainConfig,
) -> Tuple[ModelParams, RmspropState]:
    """v' = decay*v + (1-decay)*g^2; theta' = theta - lr*g/(sqrt(v') + eps)"""
    grads = clip_by_global_norm(grads, config.gradient_clip_norm)
    decay, lr, eps = config.rmsprop_decay, config.learning_rate, config.rmsprop_epsilon
    new_params, new_v = {}, {}
    for name, theta in params.arrays().items():
        g = getattr(grads, name)
        v = decay * getattr(state.v, name) + (1.0 - decay) * g * g
        new_v[name] = v
        new_params[name] = theta - lr * g / (np.sqrt(v) + eps)
    return ModelParams(**new_params), RmspropState(ParameterSet(**new_v), state.steps + 1)


@dataclass
class TrainReport:
    train_loss: List[float] = field(default_factory=list)
    val_nse: List[float] = field(default_factory=list)
    selected_epoch: int = 0
    params: Optional[ModelParams] = None

    def to_frame(self) -> pd.DataFrame:
        epochs = range(len(self.train_loss))
        return pd.DataFrame({
            "epoch": list(epochs),
            "train_loss": self.train_loss,
            "val_nse": self.val_nse,
            "selected": [int(e == self.selected_epoch) for e in epochs],
        })


EpochCallback = Callable[[int, ModelParams, float, float], None]


def _physical(values: np.ndarray, stats: Optional[NormStats]) -> np.ndarray:
    if stats is None:
        return values
    return denormalize(values, stats, (DISCHARGE,))


def train(
    train_samples: SampleSet,
    val_samples: SampleSet,
    config: TrainConfig = TrainConfig(),
    stats: Optional[NormStats] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainReport:
    """Train from a seeded initialization and keep the best-validation epoch.

    Validation NSE is computed on denormalized discharge when `stats` is given.
    """
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise SeriesTooShort("training and validation sample sets must be non-empty")
    if train_samples.targets is None or val_samples.targets is None:
        raise ValueError("training needs samples with discharge targets")

    input_dim = train_samples.inputs.shape[-1]
    params = init_params(config.seed, input_dim, config.hidden_size)
    state = RmspropState.zeros(params)
    rng = np.random.default_rng(config.seed)
    observed = _physical(val_samples.targets, stats)
    n = len(train_samples)

    report = TrainReport()
    best_nse = -np.inf
    logger.info("training on %d samples, validating on %d", n, len(val_samples))
    for epoch in tqdm(range(config.epochs), desc="epochs", disable=not config.show_progress):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            try:
                loss, grads = grad_wrt_params(params, train_samples.inputs[batch], train_samples.targets[batch])
                params, state = rmsprop_step(params, grads, state, config)
            except (NonFiniteState, NonFiniteGradient, ValueError) as e:
                raise DivergedTraining(f"epoch {epoch}: {e}")
            total += loss * len(batch)

        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergedTraining(f"epoch {epoch}: training loss is {epoch_loss}")
        try:
            simulated = _physical(predict(params, val_samples.inputs), stats)
        except NonFiniteState as e:
            raise DivergedTraining(f"epoch {epoch}: {e}")
        val_nse = nse(simulated, observed)

        report.train_loss.append(epoch_loss)
        report.val_nse.append(val_nse)
        if val_nse > best_nse:
            best_nse = val_nse
            report.selected_epoch = epoch
            report.params = params
        logger.info("epoch %d: train loss %.5f, validation NSE %.4f", epoch, epoch_loss, val_nse)
        if on_epoch is not None:
            on_epoch(epoch, params, epoch_loss, val_nse)
    return report
