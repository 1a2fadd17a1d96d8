import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_plan
from helpers import RecordingStore
from resume_forge.codec import decode_checkpoint, encode_checkpoint
from resume_forge.data import two_gaussians
from resume_forge.mlp import ModelSpec
from resume_forge.storage import BEST, LATEST, BackendUnavailable, Fault, FaultPlan, LocalStore, MockRemoteStore
from resume_forge.trainer import (
    ASYNC,
    BestPolicy,
    NoCheckpoint,
    SpecMismatch,
    Trainer,
    TrainPlan,
    load_latest,
    plan_epoch_order,
    resume,
    should_save_best,
    train,
)

SMALL = two_gaussians(40, seed=9)  # 40 rows, batch 4 -> 10 steps per epoch


def small_plan(**changes):
    base = dict(epochs=2, batch_size=4, checkpoint_interval_steps=3)
    base.update(changes)
    return fixture_plan(**base)


# -- epoch order ----------------------------------------------------------------


def test_epoch_order_examples():
    assert plan_epoch_order(5, 0, 1) == [0]
    assert plan_epoch_order(5, 3, 50) == plan_epoch_order(5, 3, 50)
    assert plan_epoch_order(5, 0, 16) != plan_epoch_order(5, 1, 16)
    with pytest.raises(ValueError):
        plan_epoch_order(5, 0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 1000), st.integers(1, 1000))
def test_epoch_order_is_permutation(seed, epoch, m):
    assert sorted(plan_epoch_order(seed, epoch, m)) == list(range(m))


# -- best policy -----------------------------------------------------------------


def hist(*losses):
    return [(i + 1, loss, 0.0) for i, loss in enumerate(losses)]


def test_should_save_best_examples():
    assert should_save_best(hist(0.9), BestPolicy("loss", 0.0, 1), None)
    # replay of a sustain=2 run over losses 0.9, 0.8, 0.85
    policy = BestPolicy("loss", 0.0, 2)
    assert not should_save_best(hist(0.9), policy, None)
    assert should_save_best(hist(0.9, 0.8), policy, None)
    assert not should_save_best(hist(0.9, 0.8, 0.85), policy, 0.8)
    assert not should_save_best(hist(0.45), BestPolicy("loss", 0.1, 1), 0.50)
    assert should_save_best(hist(0.39), BestPolicy("loss", 0.1, 1), 0.50)
    accuracy = [(1, 0.0, 0.7), (2, 0.0, 0.8)]
    assert should_save_best(accuracy, BestPolicy("accuracy", 0.0, 2), 0.6)
    assert not should_save_best(accuracy, BestPolicy("accuracy", 0.0, 2), 0.75)
    assert not should_save_best(hist(0.5), BestPolicy("loss", 0.0, 2), None)
    with pytest.raises(ValueError):
        should_save_best([], BestPolicy(), None)


def test_best_policy_validation():
    with pytest.raises(ValueError):
        BestPolicy("loss", -0.1, 1)
    with pytest.raises(ValueError):
        BestPolicy("loss", 0.0, 0)
    with pytest.raises(ValueError):
        BestPolicy("f1", 0.0, 1)


# -- checkpoint triggers ----------------------------------------------------------


def test_interval_beyond_run_gives_one_epoch_end_latest():
    store = RecordingStore(MockRemoteStore())
    train(small_plan(epochs=1, checkpoint_interval_steps=1000), SMALL, store)
    assert [p for p in store.puts if p[0] == "latest"] == [("latest", 10, 1)]


def test_ten_steps_interval_three():
    store = RecordingStore(MockRemoteStore())
    report = train(small_plan(epochs=1), SMALL, store)
    assert [s for r, s, _ in store.puts if r == "latest"] == [3, 6, 9, 10]
    assert report.checkpoints_written == len(store.puts)


def test_epoch_end_save_is_not_duplicated_when_interval_coincides():
    store = RecordingStore(MockRemoteStore())
    train(small_plan(epochs=2, checkpoint_interval_steps=5), SMALL, store)
    assert [s for r, s, _ in store.puts if r == "latest"] == [5, 10, 15, 20]


def test_decreasing_loss_writes_best_every_epoch(monkeypatch):
    losses = iter([0.9, 0.8, 0.7, 0.6])
    monkeypatch.setattr("resume_forge.trainer.evaluate", lambda *a: (next(losses), 0.5))
    store = RecordingStore(MockRemoteStore())
    train(small_plan(epochs=4, checkpoint_interval_steps=1000), SMALL, store)
    assert [e for r, _, e in store.puts if r == "best"] == [1, 2, 3, 4]


def test_report_invariant_and_text():
    report = train(small_plan(), SMALL, MockRemoteStore())
    assert report.global_step == report.epochs_completed * report.steps_per_epoch + report.step_in_epoch
    text = report.to_text()
    assert "global_step: 20" in text and "resumed_from: none" in text
    assert "epochs_completed=2\n" in report.to_kv()


# -- resume -------------------------------------------------------------------------


def test_resume_without_checkpoint():
    with pytest.raises(NoCheckpoint):
        resume(small_plan(), SMALL, MockRemoteStore())


def test_resume_after_completion_is_a_fixed_point():
    store = MockRemoteStore()
    train(small_plan(), SMALL, store)
    report = resume(small_plan(), SMALL, store)
    assert report.already_complete and report.steps_run == 0
    assert report.resumed_from == (2, 0)


@pytest.mark.parametrize(
    "change",
    [
        dict(model_spec=ModelSpec((2, 8, 2), ("tanh",), init_seed=7)),
        dict(batch_size=5),
        dict(shuffle_seed=12),
        dict(best_policy=BestPolicy("accuracy")),
    ],
)
def test_resume_refuses_mismatched_plan(change):
    store = MockRemoteStore()
    train(small_plan(), SMALL, store, halt_at=7)
    with pytest.raises(SpecMismatch):
        resume(small_plan(**change), SMALL, store)


def test_resume_refuses_different_dataset():
    store = MockRemoteStore()
    train(small_plan(), SMALL, store, halt_at=7)
    with pytest.raises(SpecMismatch):
        resume(small_plan(), two_gaussians(44, seed=9), store)


def _final_state(plan, store, kill=None):
    trainer = Trainer(plan, SMALL, store)
    if kill is None:
        trainer.run()
        return trainer
    trainer.run(halt_at=kill)
    resumed = Trainer(plan, SMALL, store, snapshot=load_latest(store))
    resumed.run()
    return resumed


@pytest.mark.parametrize("kill", [3, 4, 9, 10, 11, 17])
def test_kill_and_resume_is_bit_identical(kill, tmp_path):
    plan = small_plan(epochs=3)
    ref = _final_state(plan, MockRemoteStore())
    got = _final_state(plan, LocalStore(tmp_path), kill)
    assert got.model.bitwise_equal(ref.model)
    assert got.optimizer.bitwise_equal(ref.optimizer)
    assert got.history == ref.history
    assert (got.best_epoch, got.best_metric) == (ref.best_epoch, ref.best_metric)


def test_halt_stops_after_the_step_and_its_checkpoint():
    store = RecordingStore(MockRemoteStore())
    report = train(small_plan(), SMALL, store, halt_at=6)
    assert report.halted and report.global_step == 6
    assert store.puts[-1] == ("latest", 6, 0)


# -- storage failures -------------------------------------------------------------------


def test_sync_failure_surfaces_with_state_intact():
    store = MockRemoteStore()
    store.inject_faults(FaultPlan(((1, Fault("fail_before_write")),)))
    trainer = Trainer(small_plan(), SMALL, store)
    with pytest.raises(BackendUnavailable):
        trainer.run()
    assert trainer.global_step == 6
    before = trainer.snapshot()
    # the state at the failure is exactly what an uninterrupted run had at step 6
    ref = Trainer(small_plan(), SMALL, MockRemoteStore())
    ref.run(halt_at=6)
    assert before.model.bitwise_equal(ref.model) and before.optimizer.bitwise_equal(ref.optimizer)


def test_sync_disconnected_store():
    store = MockRemoteStore()
    store.disconnect()
    trainer = Trainer(small_plan(), SMALL, store)
    with pytest.raises(BackendUnavailable):
        trainer.checkpoint_now(LATEST)
    assert trainer.global_step == 0 and trainer.checkpoints_written == 0


def test_async_retries_once_then_succeeds():
    store = MockRemoteStore()
    store.inject_faults(FaultPlan(((0, Fault("fail_before_write")),)))
    report = train(small_plan(sync_mode=ASYNC), SMALL, store)
    assert report.skipped_saves == 0
    assert load_latest(store).global_step == 20


def test_async_skips_after_second_failure():
    store = MockRemoteStore()
    store.inject_faults(FaultPlan.parse("0:fail_before_write; 1:truncate_at:0.5"))
    report = train(small_plan(sync_mode=ASYNC), SMALL, store)
    assert report.skipped_saves == 1
    ref = train(small_plan(), SMALL, MockRemoteStore())
    assert report.checkpoints_written == ref.checkpoints_written - 1
    assert report.final_loss == ref.final_loss


def test_async_bytes_reflect_snapshot_time():
    store = MockRemoteStore()
    store.inject_faults(FaultPlan(((0, Fault("delay_ms", 50)),)))
    trainer = Trainer(small_plan(sync_mode=ASYNC), SMALL, store)
    expected = encode_checkpoint(trainer.snapshot())
    future = trainer.checkpoint_now(LATEST)
    trainer.model.weights[0][:] = 123.0  # mutate while the upload sleeps
    trainer.wait_for_upload()
    assert future.result().generation == 1
    stored = decode_checkpoint(store.get_checkpoint(LATEST).data)
    assert stored.model.weights[0].tobytes() == decode_checkpoint(expected).model.weights[0].tobytes()
    trainer._shutdown()


def test_two_sync_checkpoints_take_consecutive_generations():
    trainer = Trainer(small_plan(), SMALL, MockRemoteStore())
    assert [trainer.checkpoint_now().generation for _ in range(2)] == [1, 2]


def test_async_and_sync_agree():
    sync = Trainer(small_plan(epochs=3), SMALL, MockRemoteStore())
    sync.run()
    asy = Trainer(small_plan(epochs=3, sync_mode=ASYNC), SMALL, MockRemoteStore())
    asy.run()
    assert asy.model.bitwise_equal(sync.model) and asy.optimizer.bitwise_equal(sync.optimizer)


def test_hinge_training_uses_signed_targets():
    plan = small_plan(
        model_spec=ModelSpec((2, 8, 2), ("tanh",), "identity", 1),
        optimizer_config=fixture_plan().optimizer_config.__class__(0.05, 0.9, "hinge"),
    )
    report = train(plan, SMALL, MockRemoteStore())
    assert report.final_accuracy is not None and np.isfinite(report.final_loss)


def test_plan_validation():
    with pytest.raises(ValueError):
        small_plan(checkpoint_interval_steps=0)
    with pytest.raises(ValueError):
        small_plan(epochs=0)
    with pytest.raises(ValueError):
        small_plan(sync_mode="sometimes")
