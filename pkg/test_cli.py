"""
End-to-end tests of the command-line surface: exit codes, output files,
byte determinism, manifests and the optional run ledger
"""
import json

import numpy as np
import pandas as pd
import pytest

from data_io import (
    DISCHARGE,
    DischargeSeries,
    SplitSpec,
    make_samples,
    parse_discharge,
    parse_forcings,
    parse_states,
    split_periods,
    write_discharge,
    write_states,
)
from database import RunRecord, session_factory
from lstm_core import init_params, load_checkpoint, predict, save_checkpoint
from main import main


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.setenv("SHOW_PROGRESS", "0")
    monkeypatch.delenv("DATABASE_URL", raising=False)


def read_manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


@pytest.fixture(scope="module")
def catchment(tmp_path_factory):
    """17-year toy catchment with a constructed 30-day memory checkpoint (seq_len 60)"""
    out = tmp_path_factory.mktemp("catchment")
    assert main(["synth", "--out", str(out), "--seed", "5", "--n-days", str(17 * 365),
                 "--memory-k", "30", "--seq-len", "60"]) == 0
    return out


def test_synth_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["synth", "--out", str(out), "--seed", "3", "--n-days", "1000"]) == 0
    for name in ("forcings.csv", "discharge.csv", "states.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()

    manifest = read_manifest(a)
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 3
    assert sorted(manifest["outputs"]) == ["discharge.csv", "forcings.csv", "states.csv"]
    assert manifest["results"]["water_balance_relative"] <= 1e-10

    forcings = parse_forcings(a / "forcings.csv")
    assert len(forcings) == 1000
    assert forcings.dates[0] == pd.Timestamp("1980-10-01")
    assert parse_states(a / "states.csv").state_names == ["snow", "soil"]
    assert (a / "forcings.csv").read_text().splitlines()[0] == "date,precip,srad,tmin,tmax,vp"


def test_synth_linear_task(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--seed", "1", "--n-days", "800", "--linear-k", "7"]) == 0
    assert not (tmp_path / "states.csv").exists()
    forcings = parse_forcings(tmp_path / "forcings.csv")
    discharge = parse_discharge(tmp_path / "discharge.csv")
    expected = forcings.frame["precip"].rolling(7, min_periods=1).mean()
    np.testing.assert_allclose(discharge.frame[DISCHARGE].to_numpy(), expected.to_numpy(), atol=1e-10)


def test_missing_discharge_exits_1(tmp_path, catchment, capsys):
    out = tmp_path / "run"
    code = main(["train", "--forcings", str(catchment / "forcings.csv"),
                 "--discharge", str(tmp_path / "nowhere.csv"), "--out", str(out)])
    assert code == 1
    assert "nowhere.csv" in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_invalid_config_exits_2(tmp_path, catchment):
    config = tmp_path / "train.cfg"
    config.write_text("epochs=0\n")
    code = main(["train", "--forcings", str(catchment / "forcings.csv"),
                 "--discharge", str(catchment / "discharge.csv"), "--config", str(config),
                 "--out", str(tmp_path / "run")])
    assert code == 2


def assert_same_outputs(a, b):
    """Every output except the manifest (wall time) is byte-identical"""
    names = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "manifest.json")
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.parametrize("command, expected", [
    (["tsoi", "--checkpoint", "{tmp}/missing.ckpt", "--forcings", "{data}/forcings.csv"], 1),
    (["inspect-cell", "--checkpoint", "{tmp}/missing.ckpt", "--forcings", "{data}/forcings.csv",
      "--cell", "0", "--date", "1996-01-01"], 1),
    (["inspect-cell", "--checkpoint", "{data}/memory_30.ckpt", "--forcings", "{data}/forcings.csv",
      "--cell", "10", "--date", "1996-01-01"], 2),
    (["train", "--forcings", "{data}/forcings.csv", "--discharge", "{data}/discharge.csv",
      "--config", "{tmp}/zero_epochs.cfg"], 2),
    (["synth", "--config", "{tmp}/bad_toy.cfg"], 2),
])
def test_failure_removes_stale_manifest(tmp_path, catchment, command, expected):
    (tmp_path / "zero_epochs.cfg").write_text("epochs=0\n")
    (tmp_path / "bad_toy.cfg").write_text("snowfall=3\n")
    out = tmp_path / "reused"
    assert main(["synth", "--out", str(out), "--n-days", "800"]) == 0
    assert (out / "manifest.json").exists()

    argv = [arg.format(tmp=tmp_path, data=catchment) for arg in command]
    assert main(argv + ["--out", str(out)]) == expected
    assert not (out / "manifest.json").exists()


def test_constructed_memory_tsoi(tmp_path, catchment):
    checkpoint = catchment / "memory_30.ckpt"
    forcings = catchment / "forcings.csv"
    out = tmp_path / "tsoi"
    assert main(["tsoi", "--checkpoint", str(checkpoint), "--forcings", str(forcings),
                 "--discharge", str(catchment / "discharge.csv"), "--m", "20", "--out", str(out)]) == 0

    frame = pd.read_csv(out / "tsoi.csv")
    assert list(frame.columns) == ["date", "doy", "tsoi"]
    loaded = load_checkpoint(checkpoint)
    series = parse_forcings(forcings)
    test_range = split_periods(series.date_range, SplitSpec())[2]
    assert len(frame) == len(make_samples(series, None, loaded.stats, 60, test_range))
    assert frame["tsoi"].max() <= 32
    assert frame["tsoi"].min() >= 0

    quantiles = pd.read_csv(out / "tsoi_quantiles.csv")
    assert list(quantiles.columns) == ["doy", "q25", "q50", "q75"]
    assert (out / "tsoi.svg").read_text().startswith("<svg")
    assert sorted(read_manifest(out)["outputs"]) == ["tsoi.csv", "tsoi.svg", "tsoi_quantiles.csv"]

    high = tmp_path / "tsoi_high"
    assert main(["tsoi", "--checkpoint", str(checkpoint), "--forcings", str(forcings),
                 "--threshold", "1e9", "--m", "5", "--out", str(high)]) == 0
    assert (pd.read_csv(high / "tsoi.csv")["tsoi"] == 0).all()

    again = tmp_path / "tsoi_again"
    assert main(["tsoi", "--checkpoint", str(checkpoint), "--forcings", str(forcings),
                 "--discharge", str(catchment / "discharge.csv"), "--m", "20", "--out", str(again)]) == 0
    assert_same_outputs(out, again)


def test_evaluate_against_own_predictions(tmp_path, catchment):
    loaded = load_checkpoint(catchment / "memory_30.ckpt")
    lifted = tmp_path / "lifted.ckpt"
    save_checkpoint(lifted, loaded.params.with_arrays(b_d=5.0), loaded.seq_len, loaded.stats, loaded.split)

    forcings = parse_forcings(catchment / "forcings.csv")
    samples = make_samples(forcings, None, loaded.stats, loaded.seq_len)
    mean, std = loaded.stats.select([DISCHARGE])
    simulated = mean[0] + std[0] * predict(loaded.params.with_arrays(b_d=5.0), samples.inputs)
    q = pd.Series(1.0, index=forcings.dates)
    q.loc[samples.dates] = simulated
    pseudo = tmp_path / "pseudo.csv"
    write_discharge(DischargeSeries(pd.DataFrame({DISCHARGE: q.to_numpy()}, index=forcings.dates)), pseudo)

    outs = [tmp_path / "eval_a", tmp_path / "eval_b"]
    for out in outs:
        assert main(["evaluate", "--checkpoint", str(lifted), "--forcings", str(catchment / "forcings.csv"),
                     "--discharge", str(pseudo), "--out", str(out)]) == 0
    metrics = pd.read_csv(outs[0] / "metrics.csv").set_index("metric")["value"]
    assert metrics["nse"] == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= metrics["snow_fraction"] <= 1.0

    hydrograph = pd.read_csv(outs[0] / "hydrograph.csv")
    assert list(hydrograph.columns) == ["date", "observed", "simulated", "precip"]
    for name in ("hydrograph.csv", "hydrograph.svg", "metrics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_evaluate_rejects_checkpoint_of_other_width(tmp_path, catchment):
    loaded = load_checkpoint(catchment / "memory_30.ckpt")
    narrow = save_checkpoint(tmp_path / "narrow.ckpt", init_params(0, input_dim=4), loaded.seq_len,
                             loaded.stats, loaded.split)
    code = main(["evaluate", "--checkpoint", str(narrow), "--forcings", str(catchment / "forcings.csv"),
                 "--discharge", str(catchment / "discharge.csv"), "--out", str(tmp_path / "eval")])
    assert code == 2
    assert not (tmp_path / "eval" / "manifest.json").exists()


@pytest.mark.slow
def test_overfit_run_scores_high_on_its_training_period(tmp_path):
    data = tmp_path / "linear"
    assert main(["synth", "--linear-k", "3", "--n-days", "800", "--out", str(data)]) == 0
    config = tmp_path / "overfit.cfg"
    config.write_text("epochs=100\nbatch_size=16\nseq_len=10\ntrain_years=1\n")
    run = tmp_path / "run"
    assert main(["train", "--forcings", str(data / "forcings.csv"), "--discharge", str(data / "discharge.csv"),
                 "--config", str(config), "--out", str(run)]) == 0

    out = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(run / "model.ckpt"), "--forcings", str(data / "forcings.csv"),
                 "--discharge", str(data / "discharge.csv"), "--period", "train", "--out", str(out)]) == 0
    metrics = pd.read_csv(out / "metrics.csv").set_index("metric")["value"]
    assert metrics["nse"] > 0.95


def test_cells(tmp_path, catchment):
    out = tmp_path / "cells"
    assert main(["cells", "--checkpoint", str(catchment / "memory_30.ckpt"),
                 "--forcings", str(catchment / "forcings.csv"),
                 "--states", str(catchment / "states.csv"), "--out", str(out)]) == 0
    frame = pd.read_csv(out / "correlations.csv")
    assert list(frame.columns) == ["cell", "snow", "soil"]
    assert frame["cell"].tolist() == list(range(10))
    assert frame.loc[1:, ["snow", "soil"]].isna().all().all()
    assert frame.loc[0, ["snow", "soil"]].abs().le(1.0).all()
    assert (out / "correlations.svg").exists()

    again = tmp_path / "cells_again"
    assert main(["cells", "--checkpoint", str(catchment / "memory_30.ckpt"),
                 "--forcings", str(catchment / "forcings.csv"),
                 "--states", str(catchment / "states.csv"), "--out", str(again)]) == 0
    assert_same_outputs(out, again)


def test_cells_with_misaligned_states_exit_2(tmp_path, catchment):
    states = parse_states(catchment / "states.csv")
    short = tmp_path / "short_states.csv"
    write_states(type(states)(states.frame.iloc[:1000]), short)
    code = main(["cells", "--checkpoint", str(catchment / "memory_30.ckpt"),
                 "--forcings", str(catchment / "forcings.csv"), "--states", str(short),
                 "--out", str(tmp_path / "cells")])
    assert code == 2


def test_inspect_cell(tmp_path, catchment):
    forcings = parse_forcings(catchment / "forcings.csv")
    day = forcings.dates[-10].strftime("%Y-%m-%d")
    args = ["inspect-cell", "--checkpoint", str(catchment / "memory_30.ckpt"),
            "--forcings", str(catchment / "forcings.csv"), "--m", "50"]

    out = tmp_path / "cell0"
    assert main(args + ["--cell", "0", "--date", day, "--out", str(out)]) == 0
    attributions = pd.read_csv(out / "attributions.csv")
    assert len(attributions) == 60
    assert attributions["date"].iloc[-1] == day
    assert list(pd.read_csv(out / "cell_trajectory.csv").columns) == ["timestep", "date", "cell0"]
    assert list(pd.read_csv(out / "temperatures.csv").columns) == ["timestep", "date", "tmin", "tmax"]
    assert (out / "inspect_cell.svg").exists()
    again = tmp_path / "cell0_again"
    assert main(args + ["--cell", "0", "--date", day, "--out", str(again)]) == 0
    assert_same_outputs(out, again)

    assert main(args + ["--cell", "10", "--date", day, "--out", str(tmp_path / "bad_cell")]) == 2
    early = forcings.dates[100].strftime("%Y-%m-%d")
    assert main(args + ["--cell", "0", "--date", early, "--out", str(tmp_path / "bad_date")]) == 2


def test_training_is_byte_deterministic(tmp_path, catchment):
    config = tmp_path / "train.cfg"
    config.write_text("epochs=2\nhidden_size=3\nseq_len=30\nbatch_size=128\ntrain_years=13\n")
    outs = [tmp_path / "run_a", tmp_path / "run_b"]
    for out in outs:
        assert main(["train", "--forcings", str(catchment / "forcings.csv"),
                     "--discharge", str(catchment / "discharge.csv"), "--config", str(config),
                     "--save-every-epoch", "--out", str(out)]) == 0
    for name in ("model.ckpt", "training_report.csv", "epoch_000.ckpt", "epoch_001.ckpt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    manifest = read_manifest(outs[0])
    assert manifest["config"]["hidden_size"] == 3
    assert manifest["config"]["train_years"] == 13
    assert set(manifest["input_digests"]) == {"forcings", "discharge", "config"}
    assert "test_nse" in manifest["results"]
    checkpoint = load_checkpoint(outs[0] / "model.ckpt")
    assert checkpoint.params.hidden_size == 3
    assert checkpoint.split == SplitSpec(train_years=13)


def test_run_ledger(tmp_path, monkeypatch, catchment):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    monkeypatch.setenv("DATABASE_URL", url)
    assert main(["synth", "--out", str(tmp_path / "synth"), "--n-days", "800", "--seed", "9"]) == 0
    assert main(["inspect-cell", "--checkpoint", str(catchment / "memory_30.ckpt"),
                 "--forcings", str(catchment / "forcings.csv"), "--cell", "12",
                 "--date", "1990-01-01", "--out", str(tmp_path / "bad")]) == 2

    with session_factory(url)() as db:
        rows = db.query(RunRecord).order_by(RunRecord.id).all()
        assert [(r.command, r.status) for r in rows] == [("synth", "completed"), ("inspect-cell", "failed")]
        assert rows[0].seed == 9
        assert sorted(rows[0].outputs) == ["discharge.csv", "forcings.csv", "states.csv"]
        assert rows[1].error_message.startswith("ShapeMismatch")


def test_unreachable_ledger_does_not_fail_the_command(tmp_path, monkeypatch):
    monkeypatch.setenv("DATABASE_URL", f"sqlite:///{tmp_path / 'missing_dir' / 'runs.db'}")
    assert main(["synth", "--out", str(tmp_path / "synth"), "--n-days", "800"]) == 0


@pytest.mark.slow
def test_snowy_catchment_end_to_end(tmp_path):
    data, run, cells = tmp_path / "data", tmp_path / "run", tmp_path / "cells"
    assert main(["synth", "--out", str(data), "--seed", "0"]) == 0
    assert main(["train", "--forcings", str(data / "forcings.csv"), "--discharge", str(data / "discharge.csv"),
                 "--out", str(run)]) == 0
    assert read_manifest(run)["results"]["test_nse"] > 0.6

    assert main(["cells", "--checkpoint", str(run / "model.ckpt"), "--forcings", str(data / "forcings.csv"),
                 "--states", str(data / "states.csv"), "--out", str(cells)]) == 0
    frame = pd.read_csv(cells / "correlations.csv")
    assert frame["snow"].abs().max() > 0.7
