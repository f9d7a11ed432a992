"""
Command implementations: each parses its inputs, runs one pipeline stage,
writes its outputs into an output directory and finishes with a manifest
"""
import hashlib
import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from analysis import (
    DEFAULT_THRESHOLD,
    cell_state_correlations,
    doy_climatology,
    doy_quantiles,
    inspect_cell,
    tsoi_frame,
    tsoi_series,
)
from attribution import DEFAULT_STEPS
from data_io import (
    DISCHARGE,
    DateRange,
    DischargeSeries,
    ForcingSeries,
    SplitSpec,
    align,
    compute_norm_stats,
    denormalize,
    make_samples,
    parse_discharge,
    parse_forcings,
    parse_states,
    split_periods,
    write_csv,
    write_discharge,
    write_forcings,
    write_states,
)
from exceptions import CheckpointFormatError, ConfigError, DataFileError, DateMismatch
from grad_engine import Target
from lstm_core import Checkpoint, load_checkpoint, predict, save_checkpoint
from metrics import nse, snow_fraction
from plots import cell_inspection_svg, correlation_grid_svg, hydrograph_svg, tsoi_quantile_svg
from synthetic import generate, linear_teacher_task, load_toy_config, memory_model_params
from training import load_run_config, train

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PERIODS = ("train", "validation", "test")
PathLike = Union[str, Path]


class RunManifest(BaseModel):
    """What a command read, how it was configured and what it wrote"""
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    input_digests: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    results: Dict[str, float] = Field(default_factory=dict)
    wall_time: float = 0.0
    seed: Optional[int] = None


def get_file_hash(file_path: PathLike) -> str:
    """SHA-256 of the file content"""
    hash_sha256 = hashlib.sha256()
    try:
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_sha256.update(chunk)
    except OSError as e:
        raise DataFileError(f"could not read {file_path}: {e}")
    return hash_sha256.hexdigest()


class _Run:
    """Output directory bookkeeping shared by all commands"""

    def __init__(self, command: str, out: PathLike, inputs: Dict[str, Optional[PathLike]]):
        self.started = time.perf_counter()
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        stale = self.out / MANIFEST
        if stale.exists():
            stale.unlink()
        self.manifest = RunManifest(command=command)
        for name, path in inputs.items():
            if path is not None:
                self.manifest.input_digests[name] = get_file_hash(path)

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def finish(self) -> RunManifest:
        missing = [name for name in self.manifest.outputs if not (self.out / name).exists()]
        if missing:
            raise DataFileError(f"expected outputs were not written: {', '.join(missing)}")
        self.manifest.wall_time = time.perf_counter() - self.started
        target = self.out / MANIFEST
        temporary = self.out / f".{MANIFEST}.tmp"
        temporary.write_text(self.manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        os.replace(temporary, target)
        logger.info("%s finished in %.1f s, %d outputs in %s",
                    self.manifest.command, self.manifest.wall_time, len(self.manifest.outputs), self.out)
        return self.manifest


def _load_pair(forcings_path: PathLike, discharge_path: Optional[PathLike]):
    forcings = parse_forcings(forcings_path)
    discharge = None
    if discharge_path is not None:
        discharge = parse_discharge(discharge_path)
        align(forcings, discharge)
    return forcings, discharge


def _periods(forcings: ForcingSeries, split: SplitSpec) -> Dict[str, DateRange]:
    return dict(zip(PERIODS, split_periods(forcings.date_range, split)))


def _trained_checkpoint(path: PathLike) -> Checkpoint:
    checkpoint = load_checkpoint(path)
    if checkpoint.stats is None or checkpoint.split is None:
        raise CheckpointFormatError(f"{path}: checkpoint lacks normalization statistics or split settings")
    return checkpoint


def _check_period(period: str) -> None:
    if period not in PERIODS:
        raise ConfigError(f"period must be one of {', '.join(PERIODS)}")


## train

def cmd_train(
    forcings_path: PathLike,
    discharge_path: PathLike,
    out: PathLike,
    config_path: Optional[PathLike] = None,
    overrides: Optional[Dict[str, Any]] = None,
    save_every_epoch: bool = False,
) -> RunManifest:
    run = _Run("train", out, {"forcings": forcings_path, "discharge": discharge_path, "config": config_path})
    config, split = load_run_config(config_path, overrides)
    run.manifest.config = {**config.model_dump(mode="json"), **split.model_dump(mode="json")}
    run.manifest.seed = config.seed

    forcings, discharge = _load_pair(forcings_path, discharge_path)
    periods = _periods(forcings, split)
    stats = compute_norm_stats(forcings, discharge, periods["train"])
    samples = {
        name: make_samples(forcings, discharge, stats, config.seq_len, period)
        for name, period in periods.items()
    }
    logger.info("periods: %s", ", ".join(f"{k} {v}" for k, v in periods.items()))

    def save_epoch(epoch, params, loss, val_nse):
        save_checkpoint(run.path(f"epoch_{epoch:03d}.ckpt"), params, config.seq_len, stats, split)

    report = train(samples["train"], samples["validation"], config, stats,
                   on_epoch=save_epoch if save_every_epoch else None)
    save_checkpoint(run.path("model.ckpt"), report.params, config.seq_len, stats, split)
    write_csv(report.to_frame(), run.path("training_report.csv"))

    test = samples["test"]
    simulated = denormalize(predict(report.params, test.inputs), stats, (DISCHARGE,))
    observed = denormalize(test.targets, stats, (DISCHARGE,))
    run.manifest.results = {
        "selected_epoch": float(report.selected_epoch),
        "validation_nse": float(report.val_nse[report.selected_epoch]),
        "test_nse": nse(simulated, observed),
    }
    return run.finish()


## evaluate

def cmd_evaluate(
    checkpoint_path: PathLike,
    forcings_path: PathLike,
    discharge_path: PathLike,
    out: PathLike,
    period: str = "test",
) -> RunManifest:
    run = _Run("evaluate", out, {"checkpoint": checkpoint_path, "forcings": forcings_path,
                                 "discharge": discharge_path})
    _check_period(period)
    run.manifest.config = {"period": period}
    checkpoint = _trained_checkpoint(checkpoint_path)
    forcings, discharge = _load_pair(forcings_path, discharge_path)
    window = _periods(forcings, checkpoint.split)[period]
    samples = make_samples(forcings, discharge, checkpoint.stats, checkpoint.seq_len, window)

    simulated = denormalize(predict(checkpoint.params, samples.inputs), checkpoint.stats, (DISCHARGE,))
    observed = discharge.frame[DISCHARGE].reindex(samples.dates).to_numpy()
    days = forcings.frame.reindex(samples.dates)
    score = nse(simulated, observed)

    write_csv(pd.DataFrame({
        "date": samples.dates,
        "observed": observed,
        "simulated": simulated,
        "precip": days["precip"].to_numpy(),
    }), run.path("hydrograph.csv"))
    hydrograph_svg(run.path("hydrograph.svg"), samples.dates, observed, simulated,
                   days["precip"].to_numpy(), days["tmin"].to_numpy() < 0.0,
                   title=f"Discharge, {period} period (NSE {score:.3f})")
    fraction = snow_fraction(days["precip"], days["tmin"], days["tmax"])
    write_csv(pd.DataFrame({"metric": ["nse", "snow_fraction"], "value": [score, fraction]}),
              run.path("metrics.csv"))
    run.manifest.results = {"nse": score, "snow_fraction": fraction}
    return run.finish()


## tsoi

def cmd_tsoi(
    checkpoint_path: PathLike,
    forcings_path: PathLike,
    out: PathLike,
    discharge_path: Optional[PathLike] = None,
    threshold: float = DEFAULT_THRESHOLD,
    m: int = DEFAULT_STEPS,
    period: str = "test",
    show_progress: bool = False,
) -> RunManifest:
    run = _Run("tsoi", out, {"checkpoint": checkpoint_path, "forcings": forcings_path,
                             "discharge": discharge_path})
    _check_period(period)
    run.manifest.config = {"threshold": threshold, "m": m, "period": period}
    checkpoint = _trained_checkpoint(checkpoint_path)
    forcings, discharge = _load_pair(forcings_path, discharge_path)
    window = _periods(forcings, checkpoint.split)[period]
    samples = make_samples(forcings, None, checkpoint.stats, checkpoint.seq_len, window)

    results = tsoi_series(checkpoint.params, samples, threshold, m, show_progress=show_progress)
    quantiles = doy_quantiles(results).to_frame()
    climatology = doy_climatology(forcings, discharge, window)
    write_csv(tsoi_frame(results), run.path("tsoi.csv"))
    write_csv(quantiles, run.path("tsoi_quantiles.csv"))
    tsoi_quantile_svg(run.path("tsoi.svg"), quantiles, climatology)

    values = np.array([r.tsoi for r in results], dtype=np.float64)
    run.manifest.results = {"samples": float(values.size), "median_tsoi": float(np.median(values)),
                            "max_tsoi": float(values.max())}
    return run.finish()


## cells

def cmd_cells(
    checkpoint_path: PathLike,
    forcings_path: PathLike,
    states_path: PathLike,
    out: PathLike,
    period: str = "test",
) -> RunManifest:
    run = _Run("cells", out, {"checkpoint": checkpoint_path, "forcings": forcings_path, "states": states_path})
    _check_period(period)
    run.manifest.config = {"period": period}
    checkpoint = _trained_checkpoint(checkpoint_path)
    forcings = parse_forcings(forcings_path)
    states = parse_states(states_path)
    window = _periods(forcings, checkpoint.split)[period]
    samples = make_samples(forcings, None, checkpoint.stats, checkpoint.seq_len, window)

    report = cell_state_correlations(checkpoint.params, samples, states)
    write_csv(report.to_frame(), run.path("correlations.csv"))
    write_csv(report.to_frame(masked=True), run.path("correlations_masked.csv"))
    correlation_grid_svg(run.path("correlations.svg"), report.mean, report.mask, report.state_names)
    run.manifest.results = {
        f"max_abs_{name}": float(np.nanmax(np.abs(report.mean[:, k]))) if np.isfinite(report.mean[:, k]).any()
        else float("nan")
        for k, name in enumerate(report.state_names)
    }
    return run.finish()


## inspect-cell

def cmd_inspect_cell(
    checkpoint_path: PathLike,
    forcings_path: PathLike,
    cell: int,
    day: str,
    out: PathLike,
    m: int = DEFAULT_STEPS,
    period: str = "test",
) -> RunManifest:
    run = _Run("inspect-cell", out, {"checkpoint": checkpoint_path, "forcings": forcings_path})
    _check_period(period)
    run.manifest.config = {"cell": cell, "date": str(day), "m": m, "period": period}
    checkpoint = _trained_checkpoint(checkpoint_path)
    Target.memory_cell(cell).validate(checkpoint.params)
    forcings = parse_forcings(forcings_path)
    window = _periods(forcings, checkpoint.split)[period]
    samples = make_samples(forcings, None, checkpoint.stats, checkpoint.seq_len, window)
    try:
        sample = samples[samples.index_of(day)]
    except (KeyError, ValueError):
        raise DateMismatch(f"{day} is not a prediction date of the {period} period {window}")

    inspection = inspect_cell(checkpoint.params, sample, cell, checkpoint.stats, m)
    write_csv(inspection.attribution_frame(), run.path("attributions.csv"))
    write_csv(inspection.trajectory_frame(), run.path("cell_trajectory.csv"))
    write_csv(inspection.temperature_frame(), run.path("temperatures.csv"))
    cell_inspection_svg(run.path("inspect_cell.svg"), inspection.dates,
                        inspection.attribution_frame().drop(columns=["timestep", "date"]),
                        inspection.trajectory, inspection.temperatures, cell)
    run.manifest.results = {"residual": inspection.attribution.residual, "delta": inspection.attribution.delta}
    return run.finish()


## synth

def cmd_synth(
    out: PathLike,
    config_path: Optional[PathLike] = None,
    overrides: Optional[Dict[str, Any]] = None,
    linear_k: Optional[int] = None,
    memory_k: Optional[int] = None,
    seq_len: int = 365,
) -> RunManifest:
    run = _Run("synth", out, {"config": config_path})
    config = load_toy_config(config_path, **(overrides or {}))
    run.manifest.config = {**config.model_dump(mode="json"), "linear_k": linear_k, "memory_k": memory_k}
    run.manifest.seed = config.seed

    if linear_k is not None:
        task = linear_teacher_task(config.seed, config.n_days, linear_k)
        forcings, discharge = task.forcings, task.discharge
    else:
        trace = generate(config)
        forcings, discharge = trace.forcings(), trace.discharge()
        write_states(trace.states(), run.path("states.csv"))
        balance = trace.water_balance()
        run.manifest.results = {f"water_balance_{k}": v for k, v in balance.items()}
    write_forcings(forcings, run.path("forcings.csv"))
    write_discharge(discharge, run.path("discharge.csv"))
    frame = forcings.frame
    run.manifest.results["snow_fraction"] = snow_fraction(frame["precip"], frame["tmin"], frame["tmax"])

    if memory_k is not None:
        split = SplitSpec()
        periods = _periods(forcings, split)
        stats = compute_norm_stats(forcings, discharge, periods["train"])
        save_checkpoint(run.path(f"memory_{memory_k}.ckpt"), memory_model_params(memory_k),
                        seq_len, stats, split)
    return run.finish()


def manifest_dict(manifest: RunManifest) -> Dict[str, Any]:
    return json.loads(manifest.model_dump_json())
