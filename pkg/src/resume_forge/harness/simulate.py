"""Session-limit simulator: how much work each checkpoint interval loses.

Time is measured in step units. A session of length ``L`` can execute ``L``
units of work before it is cut off. Every training step costs one unit and
every checkpoint save costs ``save_cost`` units; a save interrupted by the
session limit never lands. Between sessions the run waits
``reconnect_delay`` units and resumes from its last landed checkpoint.

Every unit of wall time is exactly one of: useful (a step that survives to
the end), lost (a step redone after a crash), or overhead (saving and
reconnecting), so ``useful + lost + overhead == wall`` for every row.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from ..trainer import TrainPlan

MAX_SESSIONS = 1_000_000


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SessionModel:
    kind: str  # "fixed" or "uniform"
    lo: int
    hi: int | None = None
    reconnect_delay: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind == "fixed":
            if self.lo < 1:
                raise SimulationError("fixed session length must be >= 1")
        elif self.kind == "uniform":
            if self.hi is None or not 1 <= self.lo <= self.hi:
                raise SimulationError("uniform sessions need 1 <= lo <= hi")
        else:
            raise SimulationError(f"unknown session kind {self.kind!r}")
        if self.reconnect_delay < 0:
            raise SimulationError("reconnect delay must be >= 0")

    @classmethod
    def parse(cls, text: str, *, reconnect_delay: int = 0, seed: int = 0) -> "SessionModel":
        """``fixed:N`` or ``uniform:LO:HI``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "fixed" and len(parts) == 2:
                return cls("fixed", int(parts[1]), None, reconnect_delay, seed)
            if parts[0] == "uniform" and len(parts) == 3:
                return cls("uniform", int(parts[1]), int(parts[2]), reconnect_delay, seed)
        except ValueError:
            pass
        raise SimulationError(f"bad session model {text!r}; expected fixed:N or uniform:LO:HI")

    def lengths(self):
        rng = random.Random(self.seed)
        while True:
            yield self.lo if self.kind == "fixed" else rng.randint(self.lo, self.hi)

    @property
    def longest(self) -> int:
        return self.lo if self.kind == "fixed" else self.hi


@dataclass
class PolicyRow:
    interval: int
    wall: int = 0
    useful: int = 0
    lost: int = 0
    overhead: int = 0
    checkpoints: int = 0
    sessions: int = 0
    lost_per_crash: list[int] = field(default_factory=list)

    @property
    def crashes(self) -> int:
        return len(self.lost_per_crash)

    @property
    def max_lost(self) -> int:
        return max(self.lost_per_crash, default=0)

    @property
    def efficiency(self) -> float:
        return self.useful / self.wall if self.wall else 1.0


def _simulate_one(model: SessionModel, total_steps: int, interval: int, save_cost: int) -> PolicyRow:
    if interval < 1:
        raise SimulationError("checkpoint interval must be >= 1")
    # Progress needs a session that fits one interval plus its save.
    needed = min(interval, total_steps) + save_cost
    if model.longest < needed:
        raise SimulationError(
            f"sessions of at most {model.longest} units can never complete interval {interval} "
            f"with save cost {save_cost}"
        )
    row = PolicyRow(interval)
    committed = 0
    lengths = model.lengths()
    while True:
        row.sessions += 1
        if row.sessions > MAX_SESSIONS:
            raise SimulationError(f"no completion within {MAX_SESSIONS} sessions")
        budget = next(lengths)
        progress = committed
        finished = True
        while progress < total_steps:
            if budget < 1:
                finished = False
                break
            budget -= 1
            row.wall += 1
            progress += 1
            if progress % interval == 0 or progress == total_steps:
                if budget < save_cost:
                    row.wall += budget
                    row.overhead += budget
                    budget = 0
                    finished = False
                    break
                budget -= save_cost
                row.wall += save_cost
                row.overhead += save_cost
                row.checkpoints += 1
                committed = progress
        if finished:
            break
        row.lost_per_crash.append(progress - committed)
        row.lost += progress - committed
        row.wall += model.reconnect_delay
        row.overhead += model.reconnect_delay
    row.useful = total_steps
    assert row.useful + row.lost + row.overhead == row.wall
    return row


def simulate_sessions(
    plan: "TrainPlan | None",
    model: SessionModel,
    total_steps: int,
    *,
    intervals: Iterable[int] | None = None,
    save_cost: int = 0,
) -> list[PolicyRow]:
    """One row per checkpoint interval; every row replays the same session lengths.

    ``intervals`` defaults to the plan's own checkpoint interval.
    """
    if total_steps < 1:
        raise SimulationError("total_steps must be >= 1")
    if save_cost < 0:
        raise SimulationError("save cost must be >= 0")
    if intervals is None:
        if plan is None:
            raise SimulationError("give a plan or an explicit list of intervals")
        intervals = (plan.checkpoint_interval_steps,)
    return [_simulate_one(model, total_steps, int(i), save_cost) for i in intervals]


def format_table(rows: list[PolicyRow]) -> str:
    head = ("interval", "wall", "useful", "lost", "overhead", "checkpoints", "crashes", "max_lost", "efficiency")
    body = [
        (r.interval, r.wall, r.useful, r.lost, r.overhead, r.checkpoints, r.crashes, r.max_lost, f"{r.efficiency:.3f}")
        for r in rows
    ]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(line, widths)) for line in (head, *body)]
    return "\n".join(lines) + "\n"
