"""Scenario-driven simulation of time-sync attacks and the threshold filter."""

from .engine import Simulator, run
from .report import MetricsReport
from .scenario import (
    InvalidScenario,
    Role,
    ScenarioConfig,
    ScenarioParseError,
    bundled_path,
    bundled_scenarios,
    load_scenario,
    validate,
)

__all__ = [
    "Simulator",
    "run",
    "MetricsReport",
    "InvalidScenario",
    "Role",
    "ScenarioConfig",
    "ScenarioParseError",
    "bundled_path",
    "bundled_scenarios",
    "load_scenario",
    "validate",
]
