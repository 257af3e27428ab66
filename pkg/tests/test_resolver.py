import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import jaccard, tokens
from toolplane.registry import ToolDescriptor
from toolplane.resolver import (
    IntentQuery,
    lexical_similarity,
    make_scorer,
    resolve,
    score_tool,
    tokenize,
)

VOCAB = ["add", "sum", "numbers", "echo", "text", "weather", "forecast", "convert", "units", "search", "web"]


def mk(tool_id, name="", description="", tags=()):
    return ToolDescriptor.from_dict({
        "tool_id": tool_id, "name": name, "description": description, "tags": list(tags),
        "endpoint": {"kind": "builtin", "builtin_name": "echo"},
    })


class Prefs(dict):
    def get(self, agent_id, tool_id):  # noqa: D102 - lookup protocol
        return dict.get(self, tool_id, 0.5)


@pytest.mark.parametrize("text,expected", [
    ("Add two Numbers!", {"add", "two", "numbers"}),
    ("snake_case-and.dots", {"snake", "case", "and", "dots"}),
    ("v2 API v2", {"v2", "api"}),
    ("   ", set()),
    ("", set()),
])
def test_tokenize(text, expected):
    assert tokenize(text) == expected


def test_jaccard_two_thirds():
    # {add, numbers} vs {add, sum, numbers}: intersection 2, union 3
    assert lexical_similarity(tokenize("add numbers"), tokenize("add sum numbers")) == pytest.approx(2 / 3, abs=1e-12)
    assert lexical_similarity(set(), set()) == 0.0


def test_combined_score_example():
    calc = mk("calc", name="add", description="sum numbers")
    cand = score_tool(IntentQuery("bot", "add numbers"), calc, 0.5)
    assert cand.lexical == pytest.approx(2 / 3, abs=1e-12)
    assert abs(cand.combined - (0.7 * (2 / 3) + 0.3 * 0.5)) <= 1e-9
    assert round(cand.combined, 4) == 0.6167


def test_custom_weights():
    tool = mk("t", name="add numbers")
    assert make_scorer(1.0, 0.0)(IntentQuery("a", "add numbers"), tool, 0.0).combined == 1.0
    with pytest.raises(ValueError):
        make_scorer(0.8, 0.3)


def test_tie_break_by_id():
    a, b = mk("beta", name="echo text"), mk("alpha", name="echo text")
    ranked = resolve(IntentQuery("bot", "echo"), [a, b], Prefs())
    assert [c.tool_id for c in ranked] == ["alpha", "beta"]


def test_out_of_range_scorer_rejected():
    def broken(query, tool, pref):
        cand = score_tool(query, tool, pref)
        return type(cand)(cand.tool_id, cand.lexical, cand.preference, 1.5, "")

    with pytest.raises(ValueError):
        resolve(IntentQuery("bot", "x"), [mk("x")], Prefs(), broken)


def random_tools(rng, n):
    return [
        mk(f"t{i:02d}", name=rng.choice(VOCAB), description=" ".join(rng.sample(VOCAB, rng.randint(0, 3))),
           tags=rng.sample(VOCAB, rng.randint(0, 2)))
        for i in range(n)
    ]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scores_match_oracle_and_bounds(seed):
    rng = random.Random(seed)
    tools = random_tools(rng, rng.randint(1, 10))
    prefs = Prefs({t.tool_id: rng.random() for t in tools})
    intent = " ".join(rng.sample(VOCAB, rng.randint(1, 4)))
    ranked = resolve(IntentQuery("bot", intent), tools, prefs)
    for cand in ranked:
        t = next(t for t in tools if t.tool_id == cand.tool_id)
        lex = jaccard(tokens(intent), tokens(" ".join([t.name, t.description, *t.tags])))
        assert cand.lexical == pytest.approx(lex, abs=1e-12)
        assert 0.0 <= cand.combined <= 1.0
        assert cand.combined == pytest.approx(0.7 * lex + 0.3 * prefs.get("bot", t.tool_id), abs=1e-12)
    keys = [(-c.combined, c.tool_id) for c in ranked]
    assert keys == sorted(keys)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ranking_invariant_under_permutation(seed):
    rng = random.Random(seed)
    tools = random_tools(rng, rng.randint(2, 10))
    prefs = Prefs({t.tool_id: rng.choice([0.2, 0.5, 0.8]) for t in tools})
    query = IntentQuery("bot", " ".join(rng.sample(VOCAB, 2)))
    shuffled = tools[:]
    rng.shuffle(shuffled)
    assert resolve(query, tools, prefs) == resolve(query, shuffled, prefs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_raising_a_preference_never_demotes_a_tool(seed):
    rng = random.Random(seed)
    tools = random_tools(rng, rng.randint(2, 8))
    prefs = Prefs({t.tool_id: rng.random() * 0.5 for t in tools})
    query = IntentQuery("bot", " ".join(rng.sample(VOCAB, 2)))
    target = rng.choice(tools).tool_id
    before = [c.tool_id for c in resolve(query, tools, prefs)].index(target)
    prefs[target] += 0.3
    after = [c.tool_id for c in resolve(query, tools, prefs)].index(target)
    assert after <= before
