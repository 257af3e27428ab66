import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tool
from oracles import brute_force_route, smallest_topological_order
from toolplane.errors import NoMatchingTool, UnknownAgent
from toolplane.feedback import PreferenceTable
from toolplane.registry import AgentDescriptor, Registry, ToolDescriptor
from toolplane.resolver import IntentQuery
from toolplane.router import RoutingDecision, explain, filter_candidates, plan, topological_plan


def build(tools, agents=({"agent_id": "bot"},)):
    reg = Registry()
    for t in tools:
        reg.register_tool(ToolDescriptor.from_dict(t))
    for a in agents:
        reg.register_agent(AgentDescriptor.from_dict(a))
    return reg


DIAMOND = [
    tool("a", description="load data"),
    tool("b", description="left branch", dependencies=["a"]),
    tool("c", description="right branch", dependencies=["a"]),
    tool("d", description="merge diamond report", dependencies=["c", "b"]),
]


def test_filter_examples():
    tools = [ToolDescriptor.from_dict(t) for t in (
        tool("calc", tags=["math"]), tool("shell", tags=["ops"]), tool("off", tags=["math"], enabled=False),
    )]
    assert [t.tool_id for t in filter_candidates(AgentDescriptor("a"), tools)] == ["calc", "shell"]
    math_only = AgentDescriptor("a", allowed_tags=["math"])
    assert [t.tool_id for t in filter_candidates(math_only, tools)] == ["calc"]
    no_calc = AgentDescriptor("a", denied_tools=["calc"])
    assert [t.tool_id for t in filter_candidates(no_calc, tools)] == ["shell"]


def test_diamond_plan_matches_bruteforce_order():
    view = build(DIAMOND).view()
    steps = plan(IntentQuery("bot", "merge report"), view, PreferenceTable()).plan
    deps = {t.tool_id: t.dependencies for t in view.tools.values()}
    assert [s.tool_id for s in steps] == smallest_topological_order(deps, "d") == ["a", "b", "c", "d"]
    assert [s.step_index for s in steps] == [0, 1, 2, 3]
    assert steps[3].inputs_from == ("c", "b")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_dag_plans_match_bruteforce(seed):
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(rng.randint(1, 6))]
    # edges only point to earlier names, so the graph is acyclic
    deps = {n: sorted(rng.sample(names[:i], rng.randint(0, min(2, i)))) for i, n in enumerate(names)}
    view = build([tool(n, dependencies=deps[n]) for n in names]).view()
    root = rng.choice(names)
    assert [s.tool_id for s in topological_plan(root, view.tools)] == smallest_topological_order(deps, root)


def test_unknown_agent():
    with pytest.raises(UnknownAgent):
        plan(IntentQuery("ghost", "echo"), build([tool("echo")]).view(), PreferenceTable())


def test_no_match_when_no_token_overlap():
    view = build([tool("echo", description="repeat text")]).view()
    with pytest.raises(NoMatchingTool) as info:
        plan(IntentQuery("bot", "quantum chromodynamics"), view, PreferenceTable())
    assert [c.tool_id for c in info.value.candidates] == ["echo"]


def test_no_match_below_threshold():
    view = build([tool("echo", description="repeat text")]).view()
    with pytest.raises(NoMatchingTool):
        plan(IntentQuery("bot", "echo"), view, PreferenceTable(), threshold=0.95)


def test_denied_dependency_blocks_parent():
    view = build(DIAMOND, [{"agent_id": "bot", "denied_tools": ["b"]}]).view()
    with pytest.raises(NoMatchingTool) as info:
        plan(IntentQuery("bot", "merge report"), view, PreferenceTable())
    assert info.value.excluded["b"] == "denied for agent"
    assert "dependency b" in info.value.excluded["d"]


def test_preference_breaks_lexical_tie():
    view = build([tool("alpha", name="calc"), tool("beta", name="calc")]).view()
    prefs = PreferenceTable()
    assert plan(IntentQuery("bot", "calc"), view, prefs).selected_tool == "alpha"
    prefs.update("bot", "beta", 1.0)
    assert plan(IntentQuery("bot", "calc"), view, prefs).selected_tool == "beta"
    assert plan(IntentQuery("other", "calc"), build([tool("alpha", name="calc"), tool("beta", name="calc")],
                                                      [{"agent_id": "other"}]).view(), prefs).selected_tool == "alpha"


def test_decision_roundtrip_and_explain_deterministic():
    view = build(DIAMOND + [tool("e", description="merge report")]).view()
    decision = plan(IntentQuery("bot", "merge report"), view, PreferenceTable(), request_id="r1")
    again = RoutingDecision.from_dict(decision.to_dict())
    assert again == decision
    text = explain(decision)
    assert text == explain(again)
    # e scores 2/3 lexically against d's 2/4
    assert decision.selected_tool == "e" and [s.tool_id for s in decision.plan] == ["e"]
    assert text.splitlines()[0] == "request r1: selected e"
    assert "filtered out" not in text


def test_explain_mentions_tie_break():
    view = build([tool("alpha", name="calc"), tool("beta", name="calc")]).view()
    text = explain(plan(IntentQuery("bot", "calc"), view, PreferenceTable()))
    assert "tie-break: alpha, beta" in text


VOCAB = ["add", "numbers", "echo", "text", "weather", "convert", "units", "search"]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_router_matches_bruteforce(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 8)
    specs = []
    for i in range(n):
        tid = f"t{i}"
        specs.append(tool(
            tid, name=rng.choice(VOCAB), description=" ".join(rng.sample(VOCAB, rng.randint(0, 2))),
            tags=rng.sample(["x", "y", "z"], rng.randint(0, 2)), enabled=rng.random() > 0.15,
            dependencies=rng.sample([s["tool_id"] for s in specs], rng.randint(0, min(1, len(specs)))),
        ))
    agent = {"agent_id": "bot", "allowed_tags": rng.sample(["x", "y", "z"], rng.randint(0, 2)),
             "denied_tools": rng.sample([s["tool_id"] for s in specs], rng.randint(0, 2) if n > 1 else 0)}
    prefs = PreferenceTable()
    raw = {}
    for s in specs:
        if rng.random() < 0.5:
            for _ in range(rng.randint(1, 3)):
                prefs.update("bot", s["tool_id"], rng.choice([0.0, 1.0]))
            raw[s["tool_id"]] = prefs.get("bot", s["tool_id"])
    intent = " ".join(rng.sample(VOCAB, rng.randint(1, 3)))
    expected = brute_force_route(intent, agent, specs, raw)
    view = build(specs, [agent]).view()
    try:
        got = plan(IntentQuery("bot", intent), view, prefs).selected_tool
    except NoMatchingTool:
        got = None
    assert got == expected
