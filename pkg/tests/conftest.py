import time

import numpy as np
import pytest

from resume_forge.data import two_gaussians
from resume_forge.losses import LossKind
from resume_forge.mlp import ModelSpec, OptimizerConfig
from resume_forge.trainer import TrainPlan

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    n = marker.args[0]
    entry = _criteria.setdefault(n, {"title": marker.args[1], "ok": True, "seconds": 0.0, "tests": 0})
    if report.when == "call":
        entry["tests"] += 1
        entry["seconds"] += report.duration
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {n}: {verdict}  {e['title']}  ({e['tests']} tests, {e['seconds']:.2f}s)"
        )


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.fixture
def stopwatch():
    return Stopwatch


def fixture_plan(**changes) -> TrainPlan:
    """The 2-16-8-2 resume fixture: 10 epochs, batch 16, checkpoint every 7 steps."""
    base = dict(
        model_spec=ModelSpec((2, 16, 8, 2), ("tanh", "tanh"), "softmax", init_seed=7),
        optimizer_config=OptimizerConfig(0.05, 0.9, LossKind("cross_entropy")),
        epochs=10,
        batch_size=16,
        checkpoint_interval_steps=7,
        shuffle_seed=11,
    )
    base.update(changes)
    return TrainPlan(**base)


@pytest.fixture
def plan():
    return fixture_plan()


@pytest.fixture(scope="session")
def gaussians():
    return two_gaussians(200, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
