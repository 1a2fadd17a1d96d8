"""``resume-forge`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .codec import CheckpointError, Verdict, decode_checkpoint, read_header, verify_checksum
from .data import DatasetError, LabeledSet, concat, load_dataset
from .harness import (
    ConfigError,
    KillPlan,
    SessionModel,
    SimulationError,
    build_config,
    crash_injected_run,
    format_table,
    simulate_sessions,
)
from .learnpp import WEAK_LEARNERS, LearnppConfig, LearnppError, WeakLearnerStuck, learnpp_train
from .losses import LossError
from .mlp import InvalidSpec, LossActivationMismatch, NonFiniteGradient
from .storage import StorageError
from .trainer import NoCheckpoint, SpecMismatch, resume, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

RUNTIME_ERRORS = (
    CheckpointError,
    ConfigError,
    DatasetError,
    LearnppError,
    LossError,
    InvalidSpec,
    LossActivationMismatch,
    NoCheckpoint,
    NonFiniteGradient,
    SimulationError,
    SpecMismatch,
    StorageError,
    WeakLearnerStuck,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file with [model] [optimizer] [checkpoint] [best] [backend] sections")
    p.add_argument("--data", help="training dataset (CSV)")
    p.add_argument("--store", help="checkpoint directory, or a *.scenario file for the mock remote")
    p.add_argument("--interval", type=int, help="checkpoint every N global steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int, help="seed for both weight init and shuffling")
    p.add_argument("--monitor", choices=("loss", "accuracy"))
    p.add_argument("--min-delta", type=float)
    p.add_argument("--sustain", type=int)
    p.add_argument("--sync", choices=("sync", "async"))
    p.add_argument("--kill-at", help="test mode: comma-separated global steps at which to kill and resume")
    p.add_argument("--report", help="also write the report text here")
    p.add_argument("--report-kv", help="write a key=value report here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resume-forge", description="Resumable MLP training and Learn++ ensembles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    _add_run_flags(sub.add_parser("train", help="train from scratch"))
    _add_run_flags(sub.add_parser("resume", help="continue from the newest latest checkpoint"))

    for name, text in (("inspect", "print checkpoint header fields"), ("verify", "print the corruption verdict")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("file")

    lp = sub.add_parser("learnpp", help="incremental Learn++ over datasets given in arrival order")
    lp.add_argument("datasets", nargs="+")
    lp.add_argument("--test", help="held-out dataset; defaults to the union of all inputs")
    lp.add_argument("--rounds", type=int, default=5, help="weak hypotheses per database")
    lp.add_argument("--weak", choices=WEAK_LEARNERS, default="stump")
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--max-retries", type=int, default=10)
    lp.add_argument("--classes", type=int, help="number of classes (default: inferred)")

    sm = sub.add_parser("simulate", help="lost work versus checkpoint interval under session limits")
    sm.add_argument("--sessions", required=True, help="fixed:N or uniform:LO:HI (in steps)")
    sm.add_argument("--total-steps", type=int, help="length of the run (default: from --config and --data)")
    sm.add_argument("--interval", default=None, help="comma-separated intervals (default: the config's)")
    sm.add_argument("--save-cost", type=int, default=0, help="step-equivalents spent per save")
    sm.add_argument("--reconnect-delay", type=int, default=0)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--config")
    sm.add_argument("--data")
    return parser


def _overrides(args) -> dict:
    seed = args.seed
    return {
        "data": {"path": args.data},
        "backend": {"store": args.store},
        "checkpoint": {"interval": args.interval, "sync": args.sync},
        "optimizer": {"epochs": args.epochs, "batch_size": args.batch, "shuffle_seed": seed},
        "model": {"init_seed": seed},
        "best": {"monitor": args.monitor, "min_delta": args.min_delta, "sustain": args.sustain},
        "output": {"report": args.report, "report_kv": args.report_kv},
    }


def _write_outputs(cfg, text: str, kv: str | None) -> None:
    if cfg.report_path is not None:
        cfg.report_path.write_text(text, encoding="utf-8")
    if cfg.report_kv_path is not None and kv is not None:
        cfg.report_kv_path.write_text(kv, encoding="utf-8")


def _cmd_run(args, out) -> int:
    cfg = build_config(args.config, _overrides(args))
    dataset = load_dataset(cfg.data_path, cfg.plan.model_spec.layer_sizes[-1])
    if args.kill_at is not None:
        try:
            kills = KillPlan.parse(args.kill_at)
        except ValueError as exc:
            raise UsageError(f"--kill-at: {exc}") from None
        report = crash_injected_run(cfg, kills, dataset=dataset)
        text = report.to_text()
        out.write(text)
        _write_outputs(cfg, text, None)
        return EXIT_OK if report.identical else EXIT_RUNTIME
    store = cfg.backend.open()
    run = train if args.command == "train" else resume
    report = run(cfg.plan, dataset, store)
    text = report.to_text()
    out.write(text)
    _write_outputs(cfg, text, report.to_kv())
    return EXIT_OK


def _read_file(path: str) -> bytes:
    return Path(path).read_bytes()


def _cmd_inspect(args, out) -> int:
    data = _read_file(args.file)
    verdict = verify_checksum(data)
    if verdict is not Verdict.VALID:
        raise CheckpointError(f"{args.file}: corrupt checkpoint ({verdict})")
    header = read_header(data)
    snap = decode_checkpoint(data)
    for key in sorted(header):
        out.write(f"{key}: {header[key]}\n")
    out.write(f"history_entries: {len(snap.metric_history)}\n")
    out.write(f"size_bytes: {len(data)}\n")
    return EXIT_OK


def _cmd_verify(args, out) -> int:
    verdict = verify_checksum(_read_file(args.file))
    out.write(f"{verdict}\n")
    return EXIT_OK if verdict is Verdict.VALID else EXIT_RUNTIME


def _cmd_learnpp(args, out) -> int:
    dbs = [load_dataset(p, args.classes) for p in args.datasets]
    n_classes = max(db.n_classes for db in dbs)
    dbs = [LabeledSet(db.features, db.labels, n_classes) for db in dbs]
    test = load_dataset(args.test, n_classes) if args.test else concat(dbs)
    config = LearnppConfig(rounds=args.rounds, weak_learner=args.weak, seed=args.seed, max_retries=args.max_retries)
    ensemble = learnpp_train(dbs, config)
    for k in range(1, len(dbs) + 1):
        out.write(f"after_database_{k}: accuracy={ensemble.upto(k).accuracy(test)!r}\n")
    out.write(f"final: accuracy={ensemble.accuracy(test)!r} hypotheses={len(ensemble.all_stages())}\n")
    return EXIT_OK


def _cmd_simulate(args, out) -> int:
    try:
        model = SessionModel.parse(args.sessions, reconnect_delay=args.reconnect_delay, seed=args.seed)
        intervals = None if args.interval is None else [int(v) for v in args.interval.split(",") if v.strip()]
    except (SimulationError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    plan = None
    total = args.total_steps
    if args.config is not None or total is None:
        overrides = {"data": {"path": args.data}, "backend": {"store": "."}}
        cfg = build_config(args.config, overrides, require_data=total is None)
        plan = cfg.plan
        if total is None:
            m = load_dataset(cfg.data_path, plan.model_spec.layer_sizes[-1]).m
            total = plan.epochs * plan.steps_per_epoch(m)
    rows = simulate_sessions(plan, model, total, intervals=intervals, save_cost=args.save_cost)
    out.write(format_table(rows))
    return EXIT_OK


COMMANDS = {
    "train": _cmd_run,
    "resume": _cmd_run,
    "inspect": _cmd_inspect,
    "verify": _cmd_verify,
    "learnpp": _cmd_learnpp,
    "simulate": _cmd_simulate,
}


def run_cli(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err.write(str(exc).rstrip("\n") + "\n")
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        err.write(f"resume-forge: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
