import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolplane.errors import RatingOutOfRange, UnknownRequest
from toolplane.feedback import FeedbackEvent, PreferenceTable, record_feedback
from toolplane.tracker import AuditLog, InvocationRecord


def test_first_positive_rating():
    prefs = PreferenceTable()
    assert abs(prefs.update("bot", "calc", 1.0) - 0.6) <= 1e-9


def test_default_rating_is_a_fixed_point():
    prefs = PreferenceTable()
    for _ in range(10):
        assert prefs.update("bot", "calc", 0.5) == 0.5


@pytest.mark.parametrize("k", [1, 2, 3, 7])
def test_closed_form_after_k_positive_ratings(k):
    prefs = PreferenceTable()
    for _ in range(k):
        w = prefs.update("bot", "calc", 1.0)
    assert abs(w - (1 - 0.5 * 0.8 ** k)) <= 1e-12
    if k == 3:
        assert abs(w - 0.744) <= 1e-12


@pytest.mark.parametrize("bad", [1.5, -0.1, float("nan"), True, "1"])
def test_rating_out_of_range(bad):
    with pytest.raises(RatingOutOfRange):
        PreferenceTable().update("bot", "calc", bad)


def test_agents_are_isolated():
    prefs = PreferenceTable()
    prefs.update("a", "calc", 1.0)
    assert prefs.get("b", "calc") == 0.5
    assert prefs.get("a", "other") == 0.5


@given(st.lists(st.floats(0, 1), max_size=60))
def test_weights_stay_in_unit_interval(ratings):
    prefs = PreferenceTable()
    for r in ratings:
        w = prefs.update("bot", "t", r)
        assert 0.0 <= w <= 1.0 and not math.isnan(w)


def test_persistence_list_roundtrip():
    prefs = PreferenceTable()
    prefs.update("a", "x", 1.0)
    prefs.update("b", "y", 0.0)
    other = PreferenceTable()
    other.load_list(prefs.to_list())
    assert other.items() == prefs.items()


def logged(*records):
    log = AuditLog()
    for r in records:
        log.append(r)
    return log


def test_feedback_credits_selected_and_executed_tools():
    steps = [{"tool_id": t, "status": "ok", "attempts": 1, "latency_ms": [1.0]} for t in ("a", "d")]
    log = logged(InvocationRecord("r1", "bot", "x", "ok", selected_tool="d", steps=steps))
    prefs = PreferenceTable()
    assert abs(record_feedback(FeedbackEvent("r1", 1.0), log, prefs) - 0.6) <= 1e-9
    assert abs(prefs.get("bot", "a") - 0.6) <= 1e-9
    assert prefs.get("bot", "untouched") == 0.5


def test_unknown_request_and_no_selection():
    log = logged(InvocationRecord("r1", "bot", "x", "no_match"))
    with pytest.raises(UnknownRequest):
        record_feedback(FeedbackEvent("zz", 1.0), log, PreferenceTable())
    with pytest.raises(UnknownRequest):
        record_feedback(FeedbackEvent("r1", 1.0), log, PreferenceTable())


def test_disabled_feedback_leaves_weights():
    log = logged(InvocationRecord("r1", "bot", "x", "ok", selected_tool="calc"))
    prefs = PreferenceTable()
    assert record_feedback(FeedbackEvent("r1", 1.0), log, prefs, enabled=False) == 0.5
    assert prefs.items() == {}
