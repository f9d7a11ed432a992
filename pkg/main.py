"""
Command-line entry point of the LSTM rainfall-runoff toolkit

    python main.py synth --out data/
    python main.py train --forcings data/forcings.csv --discharge data/discharge.csv --out run/
    python main.py evaluate --checkpoint run/model.ckpt --forcings ... --discharge ... --out eval/
    python main.py tsoi --checkpoint run/model.ckpt --forcings ... --out tsoi/
    python main.py cells --checkpoint run/model.ckpt --forcings ... --states data/states.csv --out cells/
    python main.py inspect-cell --checkpoint run/model.ckpt --forcings ... --cell 3 --date 1998-04-01 --out cell3/

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 numerical divergence.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from analysis import DEFAULT_THRESHOLD
from attribution import DEFAULT_STEPS
from database import record_failure, record_run
from exceptions import HydroLstmError
from tasks import (
    PERIODS,
    RunManifest,
    cmd_cells,
    cmd_evaluate,
    cmd_inspect_cell,
    cmd_synth,
    cmd_train,
    cmd_tsoi,
    manifest_dict,
)

load_dotenv()

logger = logging.getLogger(__name__)


def _show_progress() -> bool:
    return os.getenv("SHOW_PROGRESS", "1").strip().lower() not in ("0", "false", "no", "")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydro-lstm", description="LSTM rainfall-runoff modelling and interpretation")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model on forcings and discharge")
    train.add_argument("--forcings", required=True)
    train.add_argument("--discharge", required=True)
    train.add_argument("--config", help="KEY=VALUE training config file")
    train.add_argument("--out", required=True)
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float, dest="learning_rate")
    train.add_argument("--seed", type=int)
    train.add_argument("--hidden", type=int, dest="hidden_size")
    train.add_argument("--seq-len", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--save-every-epoch", action="store_true")

    evaluate = commands.add_parser("evaluate", help="NSE and hydrograph of a trained model")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--forcings", required=True)
    evaluate.add_argument("--discharge", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--period", choices=PERIODS, default="test")

    tsoi = commands.add_parser("tsoi", help="time steps of influence per prediction date")
    tsoi.add_argument("--checkpoint", required=True)
    tsoi.add_argument("--forcings", required=True)
    tsoi.add_argument("--discharge", help="adds the discharge reference panel")
    tsoi.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    tsoi.add_argument("--m", type=int, default=DEFAULT_STEPS)
    tsoi.add_argument("--out", required=True)
    tsoi.add_argument("--period", choices=PERIODS, default="test")

    cells = commands.add_parser("cells", help="correlate memory cells with storage time series")
    cells.add_argument("--checkpoint", required=True)
    cells.add_argument("--forcings", required=True)
    cells.add_argument("--states", required=True)
    cells.add_argument("--out", required=True)
    cells.add_argument("--period", choices=PERIODS, default="test")

    inspect = commands.add_parser("inspect-cell", help="attribute one memory cell to the inputs")
    inspect.add_argument("--checkpoint", required=True)
    inspect.add_argument("--forcings", required=True)
    inspect.add_argument("--cell", type=int, required=True)
    inspect.add_argument("--date", required=True)
    inspect.add_argument("--m", type=int, default=DEFAULT_STEPS)
    inspect.add_argument("--out", required=True)
    inspect.add_argument("--period", choices=PERIODS, default="test")

    synth = commands.add_parser("synth", help="generate a synthetic toy catchment")
    synth.add_argument("--config", help="KEY=VALUE toy catchment config file")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--n-days", type=int)
    synth.add_argument("--linear-k", type=int, help="write the trailing-k-day precipitation task instead")
    synth.add_argument("--memory-k", type=int, help="also write a constructed k-day memory checkpoint")
    synth.add_argument("--seq-len", type=int, default=365)
    return parser


def run_command(args: argparse.Namespace) -> RunManifest:
    if args.command == "train":
        overrides = {
            "epochs": args.epochs,
            "learning_rate": args.learning_rate,
            "seed": args.seed,
            "hidden_size": args.hidden_size,
            "seq_len": args.seq_len,
            "batch_size": args.batch_size,
            "show_progress": _show_progress(),
        }
        return cmd_train(args.forcings, args.discharge, args.out, args.config, overrides, args.save_every_epoch)
    if args.command == "evaluate":
        return cmd_evaluate(args.checkpoint, args.forcings, args.discharge, args.out, args.period)
    if args.command == "tsoi":
        return cmd_tsoi(args.checkpoint, args.forcings, args.out, args.discharge, args.threshold, args.m,
                        args.period, show_progress=_show_progress())
    if args.command == "cells":
        return cmd_cells(args.checkpoint, args.forcings, args.states, args.out, args.period)
    if args.command == "inspect-cell":
        return cmd_inspect_cell(args.checkpoint, args.forcings, args.cell, args.date, args.out, args.m, args.period)
    if args.command == "synth":
        overrides = {"seed": args.seed, "n_days": args.n_days}
        return cmd_synth(args.out, args.config, overrides, args.linear_k, args.memory_k, args.seq_len)
    raise ValueError(f"unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        manifest = run_command(args)
    except HydroLstmError as e:
        print(f"❌ {args.command} failed ({type(e).__name__}): {e}", file=sys.stderr)
        record_failure(args.command, e, getattr(args, "seed", None))
        return e.exit_code
    except Exception as e:
        logger.exception("unexpected error")
        print(f"❌ {args.command} failed: {e}", file=sys.stderr)
        record_failure(args.command, e, getattr(args, "seed", None))
        return 1

    record_run(manifest_dict(manifest))
    print(f"✅ {args.command} completed in {manifest.wall_time:.1f} s")
    for name, value in manifest.results.items():
        print(f"   {name}: {value:.6g}")
    print(f"   outputs: {', '.join(manifest.outputs)} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
