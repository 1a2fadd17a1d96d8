from .config import BackendChoice, ConfigError, RunConfig, build_config, choose_backend
from .crash import CrashRecord, EquivalenceReport, KillPlan, compare_trainers, crash_injected_run
from .simulate import PolicyRow, SessionModel, SimulationError, format_table, simulate_sessions

__all__ = [
    "BackendChoice", "ConfigError", "RunConfig", "build_config", "choose_backend",
    "CrashRecord", "EquivalenceReport", "KillPlan", "compare_trainers", "crash_injected_run",
    "PolicyRow", "SessionModel", "SimulationError", "format_table", "simulate_sessions",
]
