import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_schema, random_value, reference_violations, value_for
from toolplane.errors import MalformedRule, MalformedSchema
from toolplane.validation import (
    SchemaNode,
    ValidationRule,
    Verdict,
    Violation,
    apply_rules,
    check_rules,
    json_equal,
    serialize_payload,
    validate_schema,
)

AMOUNT = {
    "kind": "object",
    "properties": {"amount": {"kind": "number", "minimum": 0}},
    "required": ["amount"],
}


def codes(verdict):
    return [(v.path, v.code) for v in verdict.violations]


def test_valid_payload_passes():
    verdict = validate_schema({"amount": 5}, SchemaNode.from_dict(AMOUNT))
    assert verdict.ok and verdict.violations == []


def test_below_minimum_is_out_of_range():
    assert codes(validate_schema({"amount": -1}, SchemaNode.from_dict(AMOUNT))) == [("/amount", "out_of_range")]


def test_missing_required_field():
    assert codes(validate_schema({}, SchemaNode.from_dict(AMOUNT))) == [("/amount", "missing_required")]


def test_type_mismatch_stops_descent():
    schema = SchemaNode.from_dict({"kind": "object", "properties": {"a": {"kind": "string"}}, "required": ["a"]})
    assert codes(validate_schema([1, 2], schema)) == [("", "type_mismatch")]


def test_all_violations_reported_in_declaration_order():
    schema = SchemaNode.from_dict({
        "kind": "object",
        "properties": {
            "z": {"kind": "string", "max_length": 2},
            "a": {"kind": "array", "items": {"kind": "integer"}},
            "m": {"kind": "boolean"},
        },
        "required": ["m"],
    })
    verdict = validate_schema({"a": [1, "x", 2.5], "z": "long"}, schema)
    assert codes(verdict) == [("/z", "too_long"), ("/a/1", "type_mismatch"), ("/a/2", "type_mismatch"),
                              ("/m", "missing_required")]


def test_bool_is_not_a_number_and_enum_is_json_typed():
    assert not validate_schema(True, SchemaNode.from_dict({"kind": "number"})).ok
    assert not validate_schema(1, SchemaNode.from_dict({"kind": "integer", "enum": [True, 2]})).ok
    assert validate_schema(2.0, SchemaNode.from_dict({"kind": "number", "enum": [2]})).ok


def test_pointer_escaping():
    schema = SchemaNode.from_dict({"kind": "object", "properties": {"a/b": {"kind": "string"}}, "required": ["a/b"]})
    assert codes(validate_schema({}, schema)) == [("/a~1b", "missing_required")]


@pytest.mark.parametrize("bad", [
    {"kind": "tuple"},
    {"kind": "string", "minimum": 1},
    {"kind": "object", "required": ["x"]},
    {"kind": "number", "minimum": 3, "maximum": 1},
    {"kind": "any", "enum": [1]},
    {"kind": "array", "items": {"kind": "nope"}},
    {"kind": "string", "pattern": "x"},
    {"kind": "string", "enum": []},
    "string",
])
def test_malformed_schema_rejected(bad):
    with pytest.raises(MalformedSchema):
        SchemaNode.from_dict(bad)


def test_schema_roundtrip():
    doc = {"kind": "object", "properties": {"x": {"kind": "array", "items": {"kind": "string", "max_length": 3}}},
           "required": ["x"]}
    assert SchemaNode.from_dict(doc).to_dict() == doc


def test_deny_pattern_rejects_email():
    rule = ValidationRule.from_dict({
        "rule_id": "no_emails", "target": "input", "applies_to": "global",
        "constraint": {"type": "deny_pattern", "pattern": r"[\w.]+@[\w.]+"},
    })
    verdict = check_rules({"note": "contact a@b.com"}, [rule], "input")
    assert not verdict.ok
    assert verdict.violations[0].code == "policy_deny"
    assert check_rules({"note": "nothing here"}, [rule], "input").ok


def test_warn_rule_does_not_reject():
    rule = ValidationRule.from_dict({
        "rule_id": "small", "target": "output", "action": "warn",
        "constraint": {"type": "max_payload_bytes", "limit": 4},
    })
    verdict = apply_rules({"long": "payload"}, [rule])
    assert verdict.ok
    assert [v.code for v in verdict.violations] == ["payload_too_large"]


def test_payload_size_uses_canonical_utf8():
    payload = {"b": "é", "a": 1}
    text = serialize_payload(payload)
    assert text == '{"a":1,"b":"é"}'
    limit = len(text.encode("utf-8"))
    ok_rule = ValidationRule("r", "input", "global", {"type": "max_payload_bytes", "limit": limit})
    tight = ValidationRule("r", "input", "global", {"type": "max_payload_bytes", "limit": limit - 1})
    assert apply_rules(payload, [ok_rule]).ok
    assert not apply_rules(payload, [tight]).ok


def test_require_field_walks_pointer():
    rule = ValidationRule("r", "input", "global", {"type": "require_field", "path": "/user/ids/0"})
    assert apply_rules({"user": {"ids": [7]}}, [rule]).ok
    assert not apply_rules({"user": {"ids": []}}, [rule]).ok


def test_rule_scoping():
    by_tool = ValidationRule("t", "input", "tool:calc", {"type": "require_field", "path": "/x"})
    by_tag = ValidationRule("g", "input", "tag:math", {"type": "require_field", "path": "/y"})
    assert by_tool.applies("calc") and not by_tool.applies("other")
    assert by_tag.applies("other", ["math"]) and not by_tag.applies("other", ["text"])
    assert not by_tool.applies(None) and not by_tag.applies(None)
    # output rules never fire on input checks
    out_rule = ValidationRule("o", "output", "global", {"type": "require_field", "path": "/x"})
    assert check_rules({}, [out_rule], "input").ok


@pytest.mark.parametrize("bad", [
    {"rule_id": "r", "target": "input", "constraint": {"type": "deny_pattern", "pattern": "("}},
    {"rule_id": "r", "target": "input", "constraint": {"type": "frobnicate"}},
    {"rule_id": "r", "target": "both", "constraint": {"type": "max_payload_bytes", "limit": 1}},
    {"rule_id": "r", "target": "input", "applies_to": "team:x",
     "constraint": {"type": "max_payload_bytes", "limit": 1}},
    {"rule_id": "r", "target": "input", "constraint": {"type": "max_payload_bytes", "limit": -1}},
    {"rule_id": "r", "target": "input", "constraint": {"type": "require_field", "path": "x"}},
    {"rule_id": "r", "target": "input", "action": "block",
     "constraint": {"type": "max_payload_bytes", "limit": 1}},
    {"target": "input", "constraint": {"type": "max_payload_bytes", "limit": 1}},
])
def test_malformed_rules_rejected(bad):
    with pytest.raises(MalformedRule):
        ValidationRule.from_dict(bad)


def test_verdict_ok_flag_soundness():
    assert Verdict().ok
    assert Verdict([Violation("", "x", "m", "warn")]).ok
    assert not Verdict([Violation("", "x", "m", "warn"), Violation("", "y", "m", "reject")]).ok


def test_json_equal():
    assert json_equal({"a": [1, 2.0]}, {"a": [1.0, 2]})
    assert not json_equal(1, True)
    assert not json_equal("1", 1)


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_matches_reference_evaluator(seed):
    rng = random.Random(seed)
    schema = random_schema(rng)
    value = value_for(rng, schema) if rng.random() < 0.7 else random_value(rng)
    verdict = validate_schema(value, SchemaNode.from_dict(schema))
    expected = reference_violations(value, schema)
    assert codes(verdict) == expected
    assert verdict.ok == (not expected)


_RULE_CONSTRAINTS = st.one_of(
    st.builds(lambda p: {"type": "deny_pattern", "pattern": p}, st.sampled_from(["x", "a", r"\d", "zz", "^$"])),
    st.builds(lambda n: {"type": "max_payload_bytes", "limit": n}, st.integers(0, 40)),
    st.builds(lambda p: {"type": "require_field", "path": p}, st.sampled_from(["/a", "/b/0", "/amount"])),
)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(_RULE_CONSTRAINTS, max_size=4), _RULE_CONSTRAINTS)
def test_adding_a_reject_rule_never_turns_reject_into_pass(seed, constraints, extra):
    rng = random.Random(seed)
    payload = random_value(rng)
    rules = [ValidationRule(f"r{i}", "input", "global", c) for i, c in enumerate(constraints)]
    before = check_rules(payload, rules, "input")
    after = check_rules(payload, rules + [ValidationRule("extra", "input", "global", extra)], "input")
    if not before.ok:
        assert not after.ok
    assert len(after.violations) >= len(before.violations)
