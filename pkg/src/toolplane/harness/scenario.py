"""Scripted end-to-end scenarios against a running control plane.

A scenario file is one JSON document::

    {
      "mocks":  {"flaky": {"fail_times": 2}},
      "tools":  [{"tool_id": "echo", "endpoint": {"kind": "builtin", "builtin_name": "echo"}},
                 {"tool_id": "remote", "endpoint": {"kind": "mock", "mock": "flaky"}}],
      "agents": [{"agent_id": "bot"}],
      "rules":  [],
      "steps":  [{"invoke": {"agent_id": "bot", "intent": "echo this"}, "expect": "ok"},
                 {"feedback": {"step": 0, "rating": 1.0}, "expect": "ok"}]
    }

``expect`` is ``"ok"`` or an error code. Endpoints of kind ``mock`` are
replaced with the URL of the named in-process mock tool. After the script the
runner cross-checks the audit log through the API: one record per invocation
with gapless sequence numbers, no denied tool in any plan, and usage
statistics equal to a recount from the raw records.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import httpx

from toolplane.harness.mock import MockTool, from_behavior


class HarnessFailure(Exception):
    """The harness could not talk to the server (distinct from a failed step)."""


@dataclass
class ScenarioSpec:
    tools: list[dict[str, Any]] = field(default_factory=list)
    agents: list[dict[str, Any]] = field(default_factory=list)
    rules: list[dict[str, Any]] = field(default_factory=list)
    mocks: dict[str, dict[str, Any]] = field(default_factory=dict)
    steps: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioSpec":
        unknown = set(data) - {"tools", "agents", "rules", "mocks", "steps"}
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        spec = cls(**copy.deepcopy(data))
        for index, step in enumerate(spec.steps):
            if ("invoke" in step) == ("feedback" in step):
                raise ValueError(f"step {index} needs exactly one of 'invoke' or 'feedback'")
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class StepCheck:
    index: int
    kind: str
    expected: str
    actual: str
    passed: bool
    request_id: Optional[str] = None
    selected_tool: Optional[str] = None
    detail: str = ""


@dataclass
class ScenarioReport:
    steps: list[StepCheck] = field(default_factory=list)
    cross_checks: dict[str, tuple[bool, str]] = field(default_factory=dict)
    stats: dict[str, Any] = field(default_factory=dict)
    duration_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps) and all(ok for ok, _ in self.cross_checks.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "steps": [vars(s) for s in self.steps],
            "cross_checks": {k: {"ok": ok, "detail": d} for k, (ok, d) in self.cross_checks.items()},
            "stats": self.stats,
            "duration_s": self.duration_s,
        }


def _request(client: httpx.Client, method: str, path: str, **kwargs: Any) -> Any:
    try:
        response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        raise HarnessFailure(f"{method} {path}: {exc}") from exc
    try:
        return response.json()
    except ValueError as exc:
        raise HarnessFailure(f"{method} {path}: HTTP {response.status_code} without JSON body") from exc


def _outcome(body: Any) -> str:
    if isinstance(body, dict) and body.get("status") == "error":
        return (body.get("error") or {}).get("code", "unknown")
    return "ok"


def _nearest_rank(values: list[float], percent: int) -> float:
    ordered = sorted(values)
    for value_index in range(len(ordered)):
        if (value_index + 1) * 100 >= percent * len(ordered):
            return ordered[value_index]
    return 0.0


def recount(records: list[dict[str, Any]]) -> dict[str, Any]:
    """Usage statistics recomputed straight from raw audit records."""
    per_tool: dict[str, list[tuple[bool, float]]] = {}
    per_agent: dict[str, dict[str, int]] = {}
    for record in records:
        histogram = per_agent.setdefault(record["agent_id"], {})
        histogram[record["outcome"]] = histogram.get(record["outcome"], 0) + 1
        for step in record["steps"]:
            per_tool.setdefault(step["tool_id"], []).append(
                (step["status"] == "ok", round(sum(step["latency_ms"]), 3))
            )
    tools = {}
    for tool_id, rows in per_tool.items():
        ok = sum(1 for good, _ in rows if good)
        latencies = [lat for _, lat in rows]
        tools[tool_id] = {
            "count": len(rows),
            "success_count": ok,
            "success_rate": ok / len(rows),
            "latency_p50": _nearest_rank(latencies, 50),
            "latency_p95": _nearest_rank(latencies, 95),
        }
    agents = {
        agent: {"request_count": sum(hist.values()), "outcomes": hist} for agent, hist in per_agent.items()
    }
    return {"tools": tools, "agents": agents}


def _policy_violations(records: list[dict[str, Any]], agents: dict[str, dict], tools: dict[str, dict]) -> list[str]:
    problems = []
    for record in records:
        agent = agents.get(record["agent_id"])
        plan = (record.get("decision") or {}).get("plan") or []
        stepped = [s["tool_id"] for s in plan] + [s["tool_id"] for s in record["steps"]]
        if agent is None:
            if stepped:
                problems.append(f"seq {record['seq']}: unknown agent has plan steps")
            continue
        for tool_id in stepped:
            tool = tools.get(tool_id)
            if tool_id in agent["denied_tools"]:
                problems.append(f"seq {record['seq']}: denied tool {tool_id}")
            elif tool is not None and agent["allowed_tags"] and not set(agent["allowed_tags"]) & set(tool["tags"]):
                problems.append(f"seq {record['seq']}: tag-excluded tool {tool_id}")
    return problems


def run_scenario(spec: ScenarioSpec, client: httpx.Client) -> ScenarioReport:
    """Run ``spec`` against the server behind ``client`` and cross-check the audit log."""
    started = time.perf_counter()
    report = ScenarioReport()
    mocks: dict[str, MockTool] = {name: from_behavior(b) for name, b in spec.mocks.items()}
    try:
        for mock in mocks.values():
            mock.start()
        setup_errors = []
        for path, items in (("/v1/register/rule", spec.rules), ("/v1/register/agent", spec.agents)):
            for item in items:
                body = _request(client, "POST", path, json=item)
                if _outcome(body) != "ok":
                    setup_errors.append(f"{path}: {_outcome(body)}")
        for tool in spec.tools:
            tool = copy.deepcopy(tool)
            endpoint = tool.get("endpoint", {})
            if endpoint.get("kind") == "mock":
                tool["endpoint"] = mocks[endpoint["mock"]].endpoint(endpoint.get("timeout_ms", 5000))
            body = _request(client, "POST", "/v1/register/tool", json=tool)
            if _outcome(body) != "ok":
                setup_errors.append(f"tool {tool.get('tool_id')}: {_outcome(body)}")
        report.cross_checks["setup"] = (not setup_errors, "; ".join(setup_errors))

        before = _request(client, "GET", "/v1/audit")
        start_seq = before[-1]["seq"] if before else 0
        responses: dict[int, dict[str, Any]] = {}
        for index, step in enumerate(spec.steps):
            expected = step.get("expect", "ok")
            if "invoke" in step:
                body = _request(client, "POST", "/v1/invoke", json=step["invoke"])
                responses[index] = body
                actual = _outcome(body)
                passed = actual == expected
                if passed and step.get("expect_tool") is not None:
                    passed = body.get("selected_tool") == step["expect_tool"]
                report.steps.append(StepCheck(
                    index, "invoke", expected, actual, passed,
                    request_id=body.get("request_id"), selected_tool=body.get("selected_tool"),
                    detail=(body.get("error") or {}).get("message", ""),
                ))
            else:
                fb = dict(step["feedback"])
                if "step" in fb:
                    fb["request_id"] = responses.get(fb.pop("step"), {}).get("request_id", "")
                body = _request(client, "POST", "/v1/feedback", json=fb)
                actual = _outcome(body)
                report.steps.append(StepCheck(index, "feedback", expected, actual, actual == expected,
                                              request_id=fb.get("request_id")))

        records = _request(client, "GET", "/v1/audit", params={"seq_from": start_seq + 1})
        invoked = [responses[i] for i in sorted(responses)]
        seqs = [r["seq"] for r in records]
        gapless = seqs == list(range(start_seq + 1, start_seq + 1 + len(invoked)))
        by_seq = {r["seq"]: r for r in records}
        linked = all(
            by_seq.get(body.get("audit_seq"), {}).get("request_id") == body.get("request_id") for body in invoked
        )
        report.cross_checks["one_request_one_record"] = (
            gapless and linked,
            f"{len(invoked)} invocations, {len(records)} records, seqs gapless={gapless}, linked={linked}",
        )

        agents = {a["agent_id"]: a for a in _request(client, "GET", "/v1/agents")}
        tools = {t["tool_id"]: t for t in _request(client, "GET", "/v1/tools")}
        problems = _policy_violations(records, agents, tools)
        report.cross_checks["policy_safety"] = (not problems, "; ".join(problems[:5]))

        if records:
            stats = _request(client, "GET", "/v1/usage",
                             params={"seq_from": start_seq + 1, "seq_to": records[-1]["seq"]})
        else:
            stats = {"tools": {}, "agents": {}, "metrics": {}}
        expected_stats = recount(records)
        same = stats.get("tools") == expected_stats["tools"] and stats.get("agents") == expected_stats["agents"]
        report.cross_checks["stats_recount"] = (same, "" if same else "server stats differ from recount")
        report.stats = stats
    finally:
        for mock in mocks.values():
            mock.stop()
        report.duration_s = round(time.perf_counter() - started, 3)
    return report
