"""Checkpointing training loop with best-model retention and exact resume.

Checkpoints go to the ``latest`` role every ``checkpoint_interval_steps``
global steps and at every epoch end; ``best`` is written at epoch ends
when :func:`should_save_best` fires. Mid-epoch resume regenerates the
epoch's shuffle from ``(shuffle_seed, epoch)`` and skips the steps already
taken, so a resumed run is bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import CheckpointSnapshot, decode_checkpoint, encode_checkpoint
from .data import LabeledSet
from .mlp import ModelSpec, OptimizerConfig, backward, evaluate, forward, init_model, sgd_step
from .rng import Xoshiro256, derive_seed
from .storage import BEST, LATEST, CheckpointRole, CheckpointStore, NotFound, StorageError, StoreDescriptor

logger = logging.getLogger(__name__)

SYNC = "sync"
ASYNC = "async"
DEFAULT_INTERVAL = 100


class NoCheckpoint(LookupError):
    pass


class SpecMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BestPolicy:
    monitored: str = "loss"
    min_delta: float = 0.0
    sustain_epochs: int = 1

    def __post_init__(self):
        if self.monitored not in ("loss", "accuracy"):
            raise ValueError(f"monitored must be 'loss' or 'accuracy', got {self.monitored!r}")
        if not self.min_delta >= 0:
            raise ValueError("min_delta must be non-negative")
        if self.sustain_epochs < 1:
            raise ValueError("sustain_epochs must be >= 1")

    def value(self, entry: tuple[int, float, float]) -> float:
        return entry[1] if self.monitored == "loss" else entry[2]


@dataclass(frozen=True)
class TrainPlan:
    model_spec: ModelSpec
    optimizer_config: OptimizerConfig
    epochs: int
    batch_size: int
    checkpoint_interval_steps: int = DEFAULT_INTERVAL
    best_policy: BestPolicy = field(default_factory=BestPolicy)
    shuffle_seed: int = 0
    deterministic: bool = True
    sync_mode: str = SYNC

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_interval_steps < 1:
            raise ValueError("checkpoint_interval_steps must be >= 1")
        if self.sync_mode not in (SYNC, ASYNC):
            raise ValueError(f"sync_mode must be {SYNC!r} or {ASYNC!r}")
        if not self.deterministic:
            raise ValueError("only deterministic training is supported")

    def steps_per_epoch(self, m: int) -> int:
        return -(-m // self.batch_size)


@dataclass
class TrainReport:
    epochs_completed: int
    global_step: int
    step_in_epoch: int
    steps_per_epoch: int
    final_loss: float | None
    final_accuracy: float | None
    checkpoints_written: int
    resumed_from: tuple[int, int] | None = None
    best: tuple[int, float] | None = None
    already_complete: bool = False
    halted: bool = False
    skipped_saves: int = 0
    steps_run: int = 0

    def to_dict(self) -> dict[str, str]:
        def fmt(v):
            if v is None:
                return "none"
            if isinstance(v, tuple):
                return ",".join(fmt(x) for x in v)
            if isinstance(v, bool):
                return str(v).lower()
            return repr(v) if isinstance(v, float) else str(v)

        return {k: fmt(getattr(self, k)) for k in self.__dataclass_fields__}

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in self.to_dict().items()) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())


def _epoch_generator(shuffle_seed: int, epoch_index: int, m: int) -> tuple[list[int], Xoshiro256]:
    gen = Xoshiro256(derive_seed(shuffle_seed, epoch_index))
    return gen.permutation(m), gen


def plan_epoch_order(shuffle_seed: int, epoch_index: int, m: int) -> list[int]:
    """Deterministic Fisher-Yates permutation of ``range(m)`` for one epoch."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return _epoch_generator(shuffle_seed, epoch_index, m)[0]


def _improves(value: float, reference: float, min_delta: float, monitored: str) -> bool:
    gain = reference - value if monitored == "loss" else value - reference
    return gain > min_delta


def should_save_best(history, policy: BestPolicy, current_best: float | None) -> bool:
    """True iff each of the last ``sustain_epochs`` evaluations beats
    ``current_best`` by more than ``min_delta``."""
    if not history:
        raise ValueError("history must not be empty")
    if len(history) < policy.sustain_epochs:
        return False
    if current_best is None:
        current_best = math.inf if policy.monitored == "loss" else -math.inf
    return all(
        _improves(policy.value(entry), current_best, policy.min_delta, policy.monitored)
        for entry in history[-policy.sustain_epochs :]
    )


def training_arrays(plan: TrainPlan, dataset: LabeledSet) -> tuple[np.ndarray, np.ndarray]:
    """Features and targets as the MLP sees them (one-hot, or +-1 for hinge)."""
    targets = dataset.one_hot(plan.model_spec.layer_sizes[-1])
    if plan.optimizer_config.loss.name == "hinge":
        targets = 2.0 * targets - 1.0
    if dataset.n_features != plan.model_spec.layer_sizes[0]:
        raise SpecMismatch(
            f"dataset has {dataset.n_features} features, model expects {plan.model_spec.layer_sizes[0]}"
        )
    return dataset.features, targets


def check_snapshot_matches(plan: TrainPlan, dataset: LabeledSet, snap: CheckpointSnapshot) -> None:
    problems = []
    if snap.model.spec != plan.model_spec:
        problems.append(f"model spec {snap.model.spec} != {plan.model_spec}")
    if snap.optimizer_config != plan.optimizer_config:
        problems.append(f"optimizer config {snap.optimizer_config} != {plan.optimizer_config}")
    for name, ours, theirs in (
        ("batch_size", plan.batch_size, snap.batch_size),
        ("dataset_size", dataset.m, snap.dataset_size),
        ("shuffle_seed", plan.shuffle_seed, snap.shuffle_seed),
        ("monitored", plan.best_policy.monitored, snap.monitored),
    ):
        if ours != theirs:
            problems.append(f"{name}: plan has {ours!r}, checkpoint has {theirs!r}")
    if problems:
        raise SpecMismatch("checkpoint does not match plan: " + "; ".join(problems))


class Trainer:
    """Owns one run's in-memory state; ``run`` advances it to plan completion."""

    def __init__(
        self,
        plan: TrainPlan,
        dataset: LabeledSet,
        store: CheckpointStore,
        snapshot: CheckpointSnapshot | None = None,
    ):
        self.plan = plan
        self.dataset = dataset
        self.store = store
        self.features, self.targets = training_arrays(plan, dataset)
        self.steps_per_epoch = plan.steps_per_epoch(dataset.m)
        self.checkpoints_written = 0
        self.skipped_saves = 0
        self.last_descriptor: StoreDescriptor | None = None
        self._executor: ThreadPoolExecutor | None = None
        self._inflight: Future | None = None
        self._abandoned = threading.Event()

        if snapshot is None:
            self.model, self.optimizer = init_model(plan.model_spec)
            self.epoch = 0
            self.step_in_epoch = 0
            self.global_step = 0
            self.history: list[tuple[int, float, float]] = []
            self.best_metric: float | None = None
            self.best_epoch: int | None = None
        else:
            check_snapshot_matches(plan, dataset, snapshot)
            self.model = snapshot.model.copy()
            self.optimizer = snapshot.optimizer.copy()
            self.epoch = snapshot.epoch
            self.step_in_epoch = snapshot.step_in_epoch
            self.global_step = snapshot.global_step
            self.history = list(snapshot.metric_history)
            self.best_metric = snapshot.best_metric
            self.best_epoch = snapshot.best_epoch
            if self.global_step != self.epoch * self.steps_per_epoch + self.step_in_epoch:
                raise SpecMismatch("checkpoint step counters disagree with the plan's batch layout")
            _, gen = _epoch_generator(plan.shuffle_seed, self.epoch, dataset.m)
            if gen.state != snapshot.rng_state:
                raise SpecMismatch("checkpoint shuffle stream does not match the plan's shuffle seed")

    # -- snapshots -----------------------------------------------------

    def snapshot(self) -> CheckpointSnapshot:
        _, gen = _epoch_generator(self.plan.shuffle_seed, self.epoch, self.dataset.m)
        return CheckpointSnapshot(
            epoch=self.epoch,
            global_step=self.global_step,
            model=self.model.copy(),
            optimizer=self.optimizer.copy(),
            optimizer_config=self.plan.optimizer_config,
            rng_state=gen.state,
            epoch_shuffle_seed=derive_seed(self.plan.shuffle_seed, self.epoch),
            step_in_epoch=self.step_in_epoch,
            metric_history=list(self.history),
            best_metric=self.best_metric,
            best_epoch=self.best_epoch,
            monitored=self.plan.best_policy.monitored,
            shuffle_seed=self.plan.shuffle_seed,
            batch_size=self.plan.batch_size,
            dataset_size=self.dataset.m,
            wall_time_unix_seconds=int(time.time()),
        )

    def checkpoint_now(self, role: CheckpointRole = LATEST):
        """Encode the current state and put it under ``role``.

        Synchronous mode returns the :class:`StoreDescriptor` and lets storage
        errors propagate. Async mode waits for any previous upload, hands the
        immutable bytes to the upload thread and returns its ``Future``.
        """
        data = encode_checkpoint(self.snapshot())
        if self.plan.sync_mode == SYNC:
            desc = self.store.put_checkpoint(role, data)
            self.checkpoints_written += 1
            self.last_descriptor = desc
            return desc
        self.wait_for_upload()
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="ckpt-upload")
        self._inflight = self._executor.submit(self._upload, role, data)
        return self._inflight

    def _upload(self, role: CheckpointRole, data: bytes) -> StoreDescriptor | None:
        try:
            return self.store.put_checkpoint(role, data)
        except StorageError as first:
            if self._abandoned.is_set():
                logger.warning("upload of %s failed while the run was being abandoned: %s", role, first)
                return None
            logger.info("upload of %s failed (%s); retrying once", role, first)
            try:
                return self.store.put_checkpoint(role, data)
            except StorageError as second:
                logger.warning("skipping %s checkpoint at step %s: %s", role, self.global_step, second)
                return None

    def wait_for_upload(self) -> None:
        """Block until the in-flight async upload (if any) resolves."""
        if self._inflight is None:
            return
        desc = self._inflight.result()
        self._inflight = None
        if desc is None:
            self.skipped_saves += 1
        else:
            self.checkpoints_written += 1
            self.last_descriptor = desc

    def _shutdown(self) -> None:
        try:
            self.wait_for_upload()
        finally:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None

    # -- training ------------------------------------------------------

    def _train_step(self, perm: list[int]) -> None:
        b = self.plan.batch_size
        idx = perm[self.step_in_epoch * b : (self.step_in_epoch + 1) * b]
        x = self.features[idx]
        y = self.targets[idx]
        cfg = self.plan.optimizer_config
        trace = forward(self.model, x)
        grads = backward(self.model, trace, y, cfg.loss)
        self.model, self.optimizer = sgd_step(self.model, grads, self.optimizer, cfg)
        self.global_step += 1
        self.step_in_epoch += 1

    def _end_epoch(self) -> None:
        loss, acc = evaluate(self.model, self.features, self.targets, self.plan.optimizer_config.loss)
        self.epoch += 1
        self.step_in_epoch = 0
        self.history.append((self.epoch, loss, acc))
        policy = self.plan.best_policy
        if should_save_best(self.history, policy, self.best_metric):
            self.best_metric = policy.value(self.history[-1])
            self.best_epoch = self.epoch
            self.checkpoint_now(BEST)
        self.checkpoint_now(LATEST)

    def report(self, *, halted: bool = False, steps_run: int = 0, **extra) -> TrainReport:
        last = self.history[-1] if self.history else None
        return TrainReport(
            epochs_completed=self.epoch,
            global_step=self.global_step,
            step_in_epoch=self.step_in_epoch,
            steps_per_epoch=self.steps_per_epoch,
            final_loss=None if last is None else last[1],
            final_accuracy=None if last is None else last[2],
            checkpoints_written=self.checkpoints_written,
            best=None if self.best_epoch is None else (self.best_epoch, self.best_metric),
            halted=halted,
            skipped_saves=self.skipped_saves,
            steps_run=steps_run,
            **extra,
        )

    def run(self, *, halt_at: int | None = None, **report_extra) -> TrainReport:
        """Train until the plan is complete, or abandon once ``global_step == halt_at``.

        Halting emulates a hard kill between steps: no further saves are
        attempted and a failing in-flight upload is not retried.
        """
        start = self.global_step
        halted = False
        try:
            while self.epoch < self.plan.epochs:
                perm = plan_epoch_order(self.plan.shuffle_seed, self.epoch, self.dataset.m)
                while True:
                    if halt_at is not None and self.global_step >= halt_at:
                        halted = True
                        self._abandoned.set()
                        return self.report(halted=True, steps_run=self.global_step - start, **report_extra)
                    self._train_step(perm)
                    if self.step_in_epoch == self.steps_per_epoch:
                        self._end_epoch()
                        break
                    if self.global_step % self.plan.checkpoint_interval_steps == 0:
                        self.checkpoint_now(LATEST)
        finally:
            self._shutdown()
        return self.report(halted=halted, steps_run=self.global_step - start, **report_extra)


def train(
    plan: TrainPlan, dataset: LabeledSet, store: CheckpointStore, *, halt_at: int | None = None
) -> TrainReport:
    """Fresh run of ``plan`` from the seeded initial model."""
    return Trainer(plan, dataset, store).run(halt_at=halt_at)


def load_latest(store: CheckpointStore) -> CheckpointSnapshot:
    try:
        fetched = store.get_checkpoint(LATEST)
    except NotFound as exc:
        raise NoCheckpoint(str(exc)) from None
    return decode_checkpoint(fetched.data)


def resume(
    plan: TrainPlan, dataset: LabeledSet, store: CheckpointStore, *, halt_at: int | None = None
) -> TrainReport:
    """Continue from the store's newest readable ``latest`` checkpoint."""
    snap = load_latest(store)
    trainer = Trainer(plan, dataset, store, snapshot=snap)
    return trainer.run(
        halt_at=halt_at,
        resumed_from=(snap.epoch, snap.step_in_epoch),
        already_complete=snap.epoch >= plan.epochs,
    )
