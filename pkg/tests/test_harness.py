import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_plan
from helpers import RecordingStore
from resume_forge.data import write_dataset
from resume_forge.harness import (
    ConfigError,
    KillPlan,
    RunConfig,
    SessionModel,
    SimulationError,
    build_config,
    crash_injected_run,
    format_table,
    simulate_sessions,
)
from resume_forge.harness.config import BackendChoice
from resume_forge.storage import FaultPlan, MockRemoteStore
from resume_forge.trainer import ASYNC, Trainer

# -- config -------------------------------------------------------------------------


@pytest.fixture
def data_file(tmp_path, gaussians):
    path = tmp_path / "train.csv"
    write_dataset(path, gaussians)
    return path


def test_defaults_plus_overrides(tmp_path, data_file):
    cfg = build_config(None, {"data": {"path": data_file}, "backend": {"store": tmp_path / "ck"},
                              "checkpoint": {"interval": 7}})
    assert cfg.plan.checkpoint_interval_steps == 7
    assert cfg.plan.model_spec.layer_sizes == (2, 16, 8, 2)
    assert cfg.backend.kind == "local"


def test_file_values_and_precedence(tmp_path, data_file):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[model]\nlayer_sizes = 2,5,2\nactivations = relu\n"
        "[optimizer]\nloss = huber\nhuber_delta = 0.5\nepochs = 3\n"
        "[best]\nmonitor = accuracy\nsustain = 2\n"
        f"[data]\npath = {data_file}\n[backend]\nstore = {tmp_path / 'ck'}\n"
        "[checkpoint]\ninterval = 11\nsync = async\n"
    )
    cfg = build_config(ini, {"optimizer": {"epochs": 5}, "checkpoint": {"interval": None}})
    plan = cfg.plan
    assert plan.model_spec.activations == ("relu",)
    assert plan.optimizer_config.loss.delta == 0.5
    assert plan.epochs == 5 and plan.checkpoint_interval_steps == 11 and plan.sync_mode == "async"
    assert plan.best_policy.sustain_epochs == 2 and plan.best_policy.monitored == "accuracy"


def test_store_from_environment(monkeypatch, tmp_path, data_file):
    monkeypatch.setenv("RESUME_FORGE_STORE", str(tmp_path / "env-store"))
    cfg = build_config(None, {"data": {"path": data_file}})
    assert cfg.backend.location == tmp_path / "env-store"


def test_scenario_file_selects_mock(tmp_path, data_file):
    sc = tmp_path / "flaky.scenario"
    sc.write_text("[scenario]\nfaults = 2:truncate_at:0.5; 4:disconnect_after_write\n")
    cfg = build_config(None, {"data": {"path": data_file}, "backend": {"store": sc}})
    assert cfg.backend.kind == "mock"
    assert str(cfg.backend.fault_plan) == "2:truncate_at:0.5; 4:disconnect_after_write"
    assert isinstance(cfg.backend.open(), MockRemoteStore)


@pytest.mark.parametrize(
    "overrides",
    [
        {"data": {"path": "missing.csv"}, "backend": {"store": "x"}},
        {"data": {"path": ""}},
        {"backend": {"store": "nowhere.scenario"}},
        {"checkpoint": {"interval": 0}},
        {"model": {"layer_sizes": "2,x"}},
        {"optimizer": {"loss": "cosine"}},
    ],
)
def test_config_errors(tmp_path, data_file, overrides, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RESUME_FORGE_STORE", raising=False)
    base = {"data": {"path": data_file}, "backend": {"store": "ck"}}
    for section, values in overrides.items():
        base[section] = {**base.get(section, {}), **values}
    with pytest.raises(ConfigError):
        build_config(None, base)


def test_unknown_section_and_missing_file(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[modle]\nx = 1\n")
    with pytest.raises(ConfigError):
        build_config(bad, require_data=False)
    with pytest.raises(ConfigError):
        build_config(tmp_path / "none.ini", require_data=False)


# -- crash-injected runs -----------------------------------------------------------------


def mock_config(plan=None, faults=None):
    return RunConfig(plan or fixture_plan(), None, BackendChoice("mock", None, faults))


def test_kill_plan_validation():
    assert KillPlan.parse("1, 7,8").kill_points == (1, 7, 8)
    with pytest.raises(ValueError):
        KillPlan((5, 5))
    with pytest.raises(ValueError):
        KillPlan((9, 3))


def test_empty_kill_plan_is_identical(gaussians):
    report = crash_injected_run(mock_config(), KillPlan(), dataset=gaussians)
    assert report.identical and report.crashes == []
    assert "verdict: identical" in report.to_text()


def test_single_mid_epoch_kill(gaussians):
    report = crash_injected_run(mock_config(), KillPlan((37,)), dataset=gaussians)
    assert report.identical
    (crash,) = report.crashes
    assert crash.crashed_at == 37 and crash.repeated_steps <= 7


def test_kill_points_must_fit_the_run(gaussians):
    with pytest.raises(ValueError):
        crash_injected_run(mock_config(), KillPlan((131,)), dataset=gaussians)


def test_local_backend_uses_a_scratch_directory(tmp_path, gaussians):
    cfg = RunConfig(fixture_plan(), None, BackendChoice("local", tmp_path))
    report = crash_injected_run(cfg, KillPlan((20, 50)), dataset=gaussians)
    assert report.identical and list(tmp_path.iterdir()) == []


def test_fault_scenario_crashes_are_recovered(gaussians):
    faults = FaultPlan.parse("0:fail_before_write; 3:truncate_at:0.5; 6:disconnect_after_write")
    report = crash_injected_run(mock_config(faults=faults), KillPlan((40,)), dataset=gaussians)
    assert report.identical
    causes = [c.cause for c in report.crashes]
    assert causes.count("kill") == 1 and "WriteFailed" in causes and "BackendUnavailable" in causes


def _put_index_of(plan, dataset, step):
    store = RecordingStore(MockRemoteStore())
    Trainer(plan, dataset, store).run()
    return next(i for i, (role, s, _) in enumerate(store.puts) if role == "latest" and s == step)


def test_kill_during_inflight_async_upload(gaussians):
    plan = fixture_plan(sync_mode=ASYNC)
    n = _put_index_of(plan, gaussians, 35)
    # the upload at the kill point and its possible retry are both cut short
    faults = FaultPlan.parse(f"{n}:truncate_at:0.5; {n + 1}:truncate_at:0.3")
    report = crash_injected_run(mock_config(plan, faults), KillPlan((35,)), dataset=gaussians)
    assert report.identical
    (crash,) = report.crashes
    assert crash.crashed_at == 35 and crash.resumed_from == 28


# -- session simulation ---------------------------------------------------------------------


def test_long_session_never_crashes():
    (row,) = simulate_sessions(None, SessionModel("fixed", 1000), 100, intervals=[17])
    assert row.lost == 0 and row.crashes == 0 and row.wall == 100


def test_fixed_fifty_interval_ten():
    (row,) = simulate_sessions(None, SessionModel("fixed", 50), 100, intervals=[10], save_cost=1)
    assert row.crashes >= 1 and all(lost <= 9 for lost in row.lost_per_crash)
    assert row.useful + row.lost + row.overhead == row.wall


def test_interval_one_is_the_limiting_policy():
    rows = simulate_sessions(None, SessionModel("uniform", 5, 20, seed=3), 200, intervals=[1, 10])
    assert rows[0].max_lost <= 1 and rows[0].checkpoints == 200
    assert rows[0].checkpoints >= rows[1].checkpoints


def test_interval_defaults_to_plan():
    (row,) = simulate_sessions(fixture_plan(), SessionModel("fixed", 30), 100)
    assert row.interval == 7


def test_session_model_parsing_and_guards():
    assert SessionModel.parse("fixed:50") == SessionModel("fixed", 50)
    assert SessionModel.parse("uniform:3:9", reconnect_delay=2).hi == 9
    for bad in ("fixed", "fixed:0", "uniform:9:3", "gauss:1:2", "fixed:x"):
        with pytest.raises(SimulationError):
            SessionModel.parse(bad)
    with pytest.raises(SimulationError):
        simulate_sessions(None, SessionModel("fixed", 5), 100, intervals=[10])
    with pytest.raises(SimulationError):
        simulate_sessions(None, SessionModel("fixed", 5), 0, intervals=[1])


def test_reconnect_delay_counts_as_overhead():
    (row,) = simulate_sessions(None, SessionModel("fixed", 50, reconnect_delay=4), 100, intervals=[10])
    assert row.overhead == 4 * row.crashes
    assert row.useful + row.lost + row.overhead == row.wall


def test_same_seed_same_table():
    model = SessionModel("uniform", 10, 60, seed=9)
    a = format_table(simulate_sessions(None, model, 500, intervals=[1, 5, 25], save_cost=2))
    b = format_table(simulate_sessions(None, model, 500, intervals=[1, 5, 25], save_cost=2))
    assert a == b and a.splitlines()[0].split()[0] == "interval"


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 40), st.integers(0, 40), st.integers(1, 300), st.integers(1, 30),
    st.integers(0, 3), st.integers(0, 5), st.integers(0, 2**32),
)
def test_conservation_and_loss_bound(lo, spread, total, interval, cost, delay, seed):
    model = SessionModel("uniform", lo, lo + spread, delay, seed)
    if model.hi < min(interval, total) + cost:
        return
    (row,) = simulate_sessions(None, model, total, intervals=[interval], save_cost=cost)
    assert row.useful + row.lost + row.overhead == row.wall
    assert row.useful == total
    assert all(0 <= lost <= interval for lost in row.lost_per_crash)
