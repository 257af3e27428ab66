"""Simulated agents and mock tools for end-to-end checks of the control plane."""

from toolplane.harness.mock import MockTool, mock_http_tool
from toolplane.harness.scenario import (
    HarnessFailure,
    ScenarioReport,
    ScenarioSpec,
    StepCheck,
    recount,
    run_scenario,
)

__all__ = [
    "HarnessFailure",
    "MockTool",
    "ScenarioReport",
    "ScenarioSpec",
    "StepCheck",
    "mock_http_tool",
    "recount",
    "run_scenario",
]
