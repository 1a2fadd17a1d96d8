"""Run configuration: a flat ``key = value`` file with sections, plus CLI overrides.

Sections and keys::

    [model]       layer_sizes, activations, output_activation, init_seed
    [optimizer]   learning_rate, momentum, loss, huber_delta,
                  epochs, batch_size, shuffle_seed
    [checkpoint]  interval, sync (sync | async)
    [best]        monitor (loss | accuracy), min_delta, sustain
    [backend]     store (a directory, or a mock-remote scenario file)
    [data]        path
    [output]      report, report_kv

A scenario file selects the in-process mock remote and holds its fault plan::

    [scenario]
    faults = 0:fail_before_write; 3:truncate_at:0.5; 6:disconnect_after_write
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from ..losses import LossKind
from ..mlp import ModelSpec, OptimizerConfig
from ..storage import CheckpointStore, FaultPlan, LocalStore, MockRemoteStore
from ..trainer import DEFAULT_INTERVAL, BestPolicy, TrainPlan

STORE_ENV = "RESUME_FORGE_STORE"
SCENARIO_SUFFIX = ".scenario"

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {
        "layer_sizes": "2,16,8,2",
        "activations": "tanh,tanh",
        "output_activation": "softmax",
        "init_seed": "0",
    },
    "optimizer": {
        "learning_rate": "0.05",
        "momentum": "0.9",
        "loss": "cross_entropy",
        "huber_delta": "1.0",
        "epochs": "10",
        "batch_size": "16",
        "shuffle_seed": "0",
    },
    "checkpoint": {"interval": str(DEFAULT_INTERVAL), "sync": "sync"},
    "best": {"monitor": "loss", "min_delta": "0.0", "sustain": "1"},
    "backend": {"store": ""},
    "data": {"path": ""},
    "output": {"report": "", "report_kv": ""},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendChoice:
    kind: str  # "local" or "mock"
    location: Path
    fault_plan: FaultPlan | None = None

    def open(self) -> CheckpointStore:
        if self.kind == "local":
            return LocalStore(self.location)
        store = MockRemoteStore()
        if self.fault_plan is not None:
            store.inject_faults(self.fault_plan)
        return store


@dataclass(frozen=True)
class RunConfig:
    plan: TrainPlan
    data_path: Path
    backend: BackendChoice
    report_path: Path | None = None
    report_kv_path: Path | None = None


def load_scenario(path: Path) -> FaultPlan:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    try:
        return FaultPlan.parse(parser.get("scenario", "faults", fallback=""))
    except ValueError as exc:
        raise ConfigError(f"bad fault plan in {path}: {exc}") from None


def choose_backend(location: str) -> BackendChoice:
    if not location:
        raise ConfigError(f"no store given (use --store, [backend] store, or ${STORE_ENV})")
    path = Path(location)
    if path.suffix == SCENARIO_SUFFIX or path.is_file():
        if not path.is_file():
            raise ConfigError(f"scenario file {path} does not exist")
        return BackendChoice("mock", path, load_scenario(path))
    return BackendChoice("local", path)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _blank_to_none(text: str) -> Path | None:
    return Path(text) if text else None


def build_config(
    config_path: str | os.PathLike | None = None,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
    *,
    require_data: bool = True,
) -> RunConfig:
    """Defaults <- config file <- overrides (``{section: {key: value}}``)."""
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        unknown = [s for s in parser.sections() if s not in DEFAULTS]
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                parser.set(section, key, str(value))

    try:
        m, o, c, b = parser["model"], parser["optimizer"], parser["checkpoint"], parser["best"]
        spec = ModelSpec(
            layer_sizes=_ints(m["layer_sizes"]),
            activations=_names(m["activations"]),
            output_activation=m["output_activation"].strip(),
            init_seed=int(m["init_seed"]),
        )
        loss = LossKind(o["loss"].strip(), float(o["huber_delta"]))
        plan = TrainPlan(
            model_spec=spec,
            optimizer_config=OptimizerConfig(float(o["learning_rate"]), float(o["momentum"]), loss),
            epochs=int(o["epochs"]),
            batch_size=int(o["batch_size"]),
            checkpoint_interval_steps=int(c["interval"]),
            best_policy=BestPolicy(b["monitor"].strip(), float(b["min_delta"]), int(b["sustain"])),
            shuffle_seed=int(o["shuffle_seed"]),
            sync_mode=c["sync"].strip(),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None

    data_path = Path(parser["data"]["path"]) if parser["data"]["path"] else None
    if require_data:
        if data_path is None:
            raise ConfigError("no dataset given (use --data or [data] path)")
        if not data_path.is_file():
            raise ConfigError(f"dataset {data_path} does not exist")
    store = parser["backend"]["store"] or os.environ.get(STORE_ENV, "")
    return RunConfig(
        plan=plan,
        data_path=data_path if data_path is not None else Path(),
        backend=choose_backend(store),
        report_path=_blank_to_none(parser["output"]["report"]),
        report_kv_path=_blank_to_none(parser["output"]["report_kv"]),
    )
