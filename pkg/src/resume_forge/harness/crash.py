"""Crash-injection driver: kill a run at chosen steps, resume, compare bits."""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from typing import Callable

from ..data import LabeledSet, load_dataset
from ..storage import CheckpointStore, LocalStore, MockRemoteStore, StorageError
from ..trainer import NoCheckpoint, Trainer, load_latest
from .config import RunConfig

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class KillPlan:
    kill_points: tuple[int, ...] = ()

    def __post_init__(self):
        points = tuple(int(k) for k in self.kill_points)
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ValueError("kill points must be strictly increasing")
        if any(k < 0 for k in points):
            raise ValueError("kill points must be non-negative")
        object.__setattr__(self, "kill_points", points)

    @classmethod
    def parse(cls, text: str) -> "KillPlan":
        return cls(tuple(int(v) for v in text.split(",") if v.strip()))


@dataclass(frozen=True)
class CrashRecord:
    cause: str  # "kill" or the storage error name
    crashed_at: int
    resumed_from: int
    repeated_steps: int


@dataclass
class EquivalenceReport:
    identical: bool
    total_steps: int
    crashes: list[CrashRecord] = field(default_factory=list)
    mismatches: list[str] = field(default_factory=list)

    @property
    def max_repeated(self) -> int:
        return max((c.repeated_steps for c in self.crashes), default=0)

    def to_text(self) -> str:
        lines = [f"verdict: {'identical' if self.identical else 'divergent'}", f"total_steps: {self.total_steps}"]
        for c in self.crashes:
            lines.append(
                f"crash: cause={c.cause} at_step={c.crashed_at} resumed_from={c.resumed_from} "
                f"repeated_steps={c.repeated_steps}"
            )
        lines.extend(f"mismatch: {m}" for m in self.mismatches)
        return "\n".join(lines) + "\n"


def compare_trainers(ref: Trainer, other: Trainer) -> list[str]:
    """Names of the state components that differ bitwise."""
    problems = []
    if not other.model.bitwise_equal(ref.model):
        problems.append("weights")
    if not other.optimizer.bitwise_equal(ref.optimizer):
        problems.append("optimizer velocity/step count")
    if [tuple(map(float.hex, (float(e), l, a))) for e, l, a in other.history] != [
        tuple(map(float.hex, (float(e), l, a))) for e, l, a in ref.history
    ]:
        problems.append("metric history")
    if (other.best_epoch, other.best_metric) != (ref.best_epoch, ref.best_metric):
        problems.append("best state")
    return problems


def _resume_or_fresh(config: RunConfig, dataset: LabeledSet, store: CheckpointStore) -> Trainer:
    try:
        snap = load_latest(store)
    except NoCheckpoint:
        return Trainer(config.plan, dataset, store)
    return Trainer(config.plan, dataset, store, snapshot=snap)


def crash_injected_run(
    config: RunConfig,
    kills: KillPlan,
    *,
    dataset: LabeledSet | None = None,
    store: CheckpointStore | None = None,
    reference_store_factory: Callable[[], CheckpointStore] = MockRemoteStore,
) -> EquivalenceReport:
    """Run ``config.plan`` with in-memory state abandoned at each kill point.

    Storage faults that abort a synchronous run count as crashes too; the
    session is reconnected and the run resumes from the newest readable
    ``latest`` checkpoint (or from scratch when none exists). The final
    state is compared bitwise with an uninterrupted reference run.
    """
    if dataset is None:
        dataset = load_dataset(config.data_path, config.plan.model_spec.layer_sizes[-1])
    plan = config.plan
    total = plan.epochs * plan.steps_per_epoch(dataset.m)
    if any(k > total for k in kills.kill_points):
        raise ValueError(f"kill points must lie within the run's {total} steps")

    reference = Trainer(plan, dataset, reference_store_factory())
    reference.run()

    tmp = None
    if store is None:
        if config.backend.kind == "local":
            tmp = tempfile.TemporaryDirectory(prefix="crash-run-", dir=_existing_parent(config))
            store = LocalStore(tmp.name)
        else:
            store = config.backend.open()
    try:
        report = EquivalenceReport(identical=False, total_steps=total)
        pending = list(kills.kill_points)
        crash_at: tuple[str, int] | None = None
        for _ in range(MAX_ATTEMPTS):
            trainer = _resume_or_fresh(config, dataset, store)
            if crash_at is not None:
                cause, step = crash_at
                report.crashes.append(CrashRecord(cause, step, trainer.global_step, step - trainer.global_step))
                crash_at = None
            target = pending[0] if pending else None
            try:
                result = trainer.run(halt_at=target)
            except StorageError as exc:
                logger.info("storage fault at step %s: %s", trainer.global_step, exc)
                crash_at = (type(exc).__name__, trainer.global_step)
                store.reconnect()
                continue
            if result.halted:
                pending.pop(0)
                crash_at = ("kill", trainer.global_step)
                store.reconnect()
                continue
            if pending and pending[0] >= total:
                pending.clear()
            break
        else:
            raise RuntimeError(f"run did not finish within {MAX_ATTEMPTS} restarts")
    finally:
        if tmp is not None:
            tmp.cleanup()

    report.mismatches = compare_trainers(reference, trainer)
    report.identical = not report.mismatches
    return report


def _existing_parent(config: RunConfig) -> str | None:
    loc = config.backend.location
    return str(loc) if loc.is_dir() else None
