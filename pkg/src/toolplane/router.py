"""Routing Handler: pick one tool for an intent and order its dependency closure."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from toolplane.errors import DependencyCycle, NoMatchingTool, UnknownAgent
from toolplane.registry import AgentDescriptor, RegistryView, ToolDescriptor
from toolplane.resolver import IntentQuery, PreferenceLookup, ScoredCandidate, Scorer, resolve

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True)
class PlanStep:
    step_index: int
    tool_id: str
    inputs_from: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"step_index": self.step_index, "tool_id": self.tool_id, "inputs_from": list(self.inputs_from)}


@dataclass
class RoutingDecision:
    request_id: str
    selected_tool: str
    plan: list[PlanStep]
    candidates: list[ScoredCandidate]
    threshold_used: float
    rationale: str
    excluded: dict[str, str] = field(default_factory=dict)
    registry_generation: int = 0

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RoutingDecision":
        return cls(
            request_id=data.get("request_id", ""),
            selected_tool=data["selected_tool"],
            plan=[PlanStep(s["step_index"], s["tool_id"], tuple(s["inputs_from"])) for s in data["plan"]],
            candidates=[ScoredCandidate.from_dict(c) for c in data["candidates"]],
            threshold_used=data["threshold_used"],
            rationale=data.get("rationale", ""),
            excluded=dict(data.get("excluded", {})),
            registry_generation=data.get("registry_generation", 0),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "selected_tool": self.selected_tool,
            "plan": [s.to_dict() for s in self.plan],
            "candidates": [c.to_dict() for c in self.candidates],
            "threshold_used": self.threshold_used,
            "rationale": self.rationale,
            "excluded": dict(self.excluded),
            "registry_generation": self.registry_generation,
        }


def exclusion_reason(agent: AgentDescriptor, tool: ToolDescriptor) -> Optional[str]:
    if not tool.enabled:
        return "disabled"
    if tool.tool_id in agent.denied_tools:
        return "denied for agent"
    if agent.allowed_tags and not set(agent.allowed_tags) & set(tool.tags):
        return "no allowed tag"
    return None


def filter_candidates(agent: AgentDescriptor, tools: Iterable[ToolDescriptor]) -> list[ToolDescriptor]:
    """Keep enabled tools the agent may use: not denied, and tag-permitted."""
    return [t for t in tools if exclusion_reason(agent, t) is None]


def dependency_closure(tool_id: str, tools: dict[str, ToolDescriptor] | Any) -> set[str]:
    seen: set[str] = set()
    stack = [tool_id]
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        stack.extend(tools[current].dependencies)
    return seen


def topological_plan(tool_id: str, tools: dict[str, ToolDescriptor] | Any) -> list[PlanStep]:
    """Kahn's algorithm over the closure; among ready tools the smallest id goes first."""
    nodes = dependency_closure(tool_id, tools)
    pending = {n: len(set(tools[n].dependencies)) for n in nodes}
    dependents: dict[str, list[str]] = {n: [] for n in nodes}
    for n in nodes:
        for dep in set(tools[n].dependencies):
            dependents[dep].append(n)
    ready = [n for n, count in pending.items() if count == 0]
    heapq.heapify(ready)
    plan: list[PlanStep] = []
    while ready:
        current = heapq.heappop(ready)
        plan.append(PlanStep(len(plan), current, tuple(tools[current].dependencies)))
        for child in dependents[current]:
            pending[child] -= 1
            if pending[child] == 0:
                heapq.heappush(ready, child)
    if len(plan) != len(nodes):
        raise DependencyCycle(f"dependency closure of {tool_id!r} is cyclic")
    return plan


def _eligible(agent: AgentDescriptor, view: RegistryView) -> tuple[list[ToolDescriptor], dict[str, str]]:
    """Tools the agent may be routed to, plus the reason each other tool was dropped.

    A tool is only eligible if every tool in its dependency closure also passes
    the filter, so a plan can never smuggle in a denied dependency.
    """
    tools = view.tools
    ordered = [tools[t] for t in sorted(tools)]
    excluded = {t.tool_id: r for t in ordered if (r := exclusion_reason(agent, t)) is not None}
    eligible = []
    for tool in ordered:
        if tool.tool_id in excluded:
            continue
        try:
            closure = dependency_closure(tool.tool_id, tools)
        except KeyError:
            excluded[tool.tool_id] = "unresolvable dependency"
            continue
        blocked = sorted(closure & excluded.keys())
        if blocked:
            excluded[tool.tool_id] = f"dependency {blocked[0]} not allowed"
        else:
            eligible.append(tool)
    return eligible, excluded


def plan(
    query: IntentQuery,
    view: RegistryView,
    prefs: Optional[PreferenceLookup],
    threshold: float = DEFAULT_THRESHOLD,
    request_id: str = "",
    scorer: Optional[Scorer] = None,
) -> RoutingDecision:
    """Route ``query`` to the best eligible tool and build its execution plan.

    Only tools sharing at least one token with the intent can be selected;
    the preference weight reorders relevant tools but cannot make an
    irrelevant one match. Raises NoMatchingTool (carrying ``candidates`` and
    ``excluded`` for the audit trail) when nothing clears ``threshold``.
    """
    agent = view.agents.get(query.agent_id)
    if agent is None:
        raise UnknownAgent(f"agent {query.agent_id!r} is not registered")
    eligible, excluded = _eligible(agent, view)
    ranked = resolve(query, eligible, prefs, scorer)
    best = next((c for c in ranked if c.lexical > 0.0), None)
    if best is None or best.combined < threshold:
        if best is None:
            message = f"no eligible tool shares a token with intent {query.intent!r}"
        else:
            message = f"best candidate {best.tool_id} scored {best.combined:.4f} < threshold {threshold}"
        err = NoMatchingTool(message)
        err.candidates = ranked
        err.excluded = excluded
        err.registry_generation = view.generation
        raise err
    steps = topological_plan(best.tool_id, view.tools)
    ties = [c.tool_id for c in ranked if c.lexical > 0.0 and c.combined == best.combined]
    rationale = f"selected {best.tool_id} with combined score {best.combined:.4f} (threshold {threshold})"
    if len(ties) > 1:
        rationale += f"; tie among {', '.join(ties)} broken by ascending tool_id"
    return RoutingDecision(
        request_id=request_id,
        selected_tool=best.tool_id,
        plan=steps,
        candidates=ranked,
        threshold_used=threshold,
        rationale=rationale,
        excluded=excluded,
        registry_generation=view.generation,
    )


def explain(decision: RoutingDecision) -> str:
    lines = [
        f"request {decision.request_id or '-'}: selected {decision.selected_tool}",
        f"threshold: {decision.threshold_used:.4f}",
        "plan:",
    ]
    for step in decision.plan:
        deps = ", ".join(step.inputs_from) or "-"
        lines.append(f"  {step.step_index}. {step.tool_id} (inputs from: {deps})")
    lines.append("candidates:")
    for rank, c in enumerate(decision.candidates, 1):
        marker = "*" if c.tool_id == decision.selected_tool else " "
        lines.append(
            f" {marker}{rank}. {c.tool_id} combined={c.combined:.4f} "
            f"lexical={c.lexical:.4f} preference={c.preference:.4f}"
        )
    if decision.excluded:
        lines.append("filtered out:")
        for tool_id in sorted(decision.excluded):
            lines.append(f"  {tool_id}: {decision.excluded[tool_id]}")
    selected = next((c for c in decision.candidates if c.tool_id == decision.selected_tool), None)
    top = [c.tool_id for c in decision.candidates if selected is not None and c.combined == selected.combined]
    if len(top) > 1:
        lines.append(f"tie-break: {', '.join(top)} share the top score; ordered by ascending tool_id")
    return "\n".join(lines) + "\n"
