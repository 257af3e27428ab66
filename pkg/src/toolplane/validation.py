"""Input/output validation: a small closed schema language plus policy rules.

Schemas are deliberately a subset of JSON Schema (``object``, ``string``,
``number``, ``integer``, ``boolean``, ``array``, ``any``) so that validation is
total and deterministic. Policy rules add content checks on top of the schema.
Violations are data: nothing here raises for a bad payload.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from toolplane.errors import MalformedRule, MalformedSchema

KINDS = ("object", "string", "number", "integer", "boolean", "array", "any")
TARGETS = ("input", "output")
ACTIONS = ("reject", "warn")
CONSTRAINT_TYPES = ("deny_pattern", "max_payload_bytes", "require_field")

VIOLATION_CODES = (
    "type_mismatch",
    "missing_required",
    "enum_mismatch",
    "out_of_range",
    "too_long",
    "policy_deny",
    "payload_too_large",
    "missing_field",
)

_SCHEMA_KEYS = {"kind", "properties", "required", "items", "enum", "minimum", "maximum", "max_length"}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class SchemaNode:
    kind: str = "any"
    properties: dict[str, "SchemaNode"] = field(default_factory=dict)
    required: list[str] = field(default_factory=list)
    items: Optional["SchemaNode"] = None
    enum: Optional[list[Any]] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    max_length: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Any, _path: str = "") -> "SchemaNode":
        """Parse and check a schema document, raising MalformedSchema on any defect."""
        where = _path or "/"
        if not isinstance(data, dict):
            raise MalformedSchema(f"schema at {where} must be an object")
        unknown = set(data) - _SCHEMA_KEYS
        if unknown:
            raise MalformedSchema(f"schema at {where} has unknown keys {sorted(unknown)}")
        kind = data.get("kind", "any")
        if kind not in KINDS:
            raise MalformedSchema(f"schema at {where} has unknown kind {kind!r}")
        if kind == "any" and len(data) > ("kind" in data):
            raise MalformedSchema(f"schema at {where}: kind 'any' takes no constraints")

        properties: dict[str, SchemaNode] = {}
        required: list[str] = []
        if "properties" in data or "required" in data:
            if kind != "object":
                raise MalformedSchema(f"schema at {where}: properties/required need kind 'object'")
            raw_props = data.get("properties", {})
            if not isinstance(raw_props, dict):
                raise MalformedSchema(f"schema at {where}: properties must be a map")
            for name, sub in raw_props.items():
                properties[name] = cls.from_dict(sub, f"{_path}/{_escape(name)}")
            required = data.get("required", [])
            if not isinstance(required, list) or not all(isinstance(r, str) for r in required):
                raise MalformedSchema(f"schema at {where}: required must be a list of names")
            if len(set(required)) != len(required):
                raise MalformedSchema(f"schema at {where}: duplicate required names")
            missing = [r for r in required if r not in properties]
            if missing:
                raise MalformedSchema(f"schema at {where}: required names {missing} not in properties")
            required = list(required)

        items = None
        if "items" in data:
            if kind != "array":
                raise MalformedSchema(f"schema at {where}: items needs kind 'array'")
            items = cls.from_dict(data["items"], f"{_path}/items")

        enum = data.get("enum")
        if enum is not None:
            if not isinstance(enum, list) or not enum:
                raise MalformedSchema(f"schema at {where}: enum must be a nonempty list")
            enum = list(enum)

        minimum, maximum = data.get("minimum"), data.get("maximum")
        for label, bound in (("minimum", minimum), ("maximum", maximum)):
            if bound is None:
                continue
            if kind not in ("number", "integer"):
                raise MalformedSchema(f"schema at {where}: {label} needs a numeric kind")
            if not _is_number(bound):
                raise MalformedSchema(f"schema at {where}: {label} must be a number")
        if minimum is not None and maximum is not None and minimum > maximum:
            raise MalformedSchema(f"schema at {where}: minimum exceeds maximum")

        max_length = data.get("max_length")
        if max_length is not None:
            if kind != "string":
                raise MalformedSchema(f"schema at {where}: max_length needs kind 'string'")
            if not isinstance(max_length, int) or isinstance(max_length, bool) or max_length < 0:
                raise MalformedSchema(f"schema at {where}: max_length must be a nonnegative integer")

        return cls(
            kind=kind,
            properties=properties,
            required=required,
            items=items,
            enum=enum,
            minimum=minimum,
            maximum=maximum,
            max_length=max_length,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.properties:
            out["properties"] = {k: v.to_dict() for k, v in self.properties.items()}
        if self.required:
            out["required"] = list(self.required)
        if self.items is not None:
            out["items"] = self.items.to_dict()
        if self.enum is not None:
            out["enum"] = list(self.enum)
        for key in ("minimum", "maximum", "max_length"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class Violation:
    path: str
    code: str
    message: str
    action: str = "reject"

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "code": self.code, "message": self.message, "action": self.action}


@dataclass
class Verdict:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(v.action == "reject" for v in self.violations)

    def __add__(self, other: "Verdict") -> "Verdict":
        return Verdict(self.violations + other.violations)

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


@dataclass
class ValidationRule:
    rule_id: str
    target: str
    applies_to: str
    constraint: dict[str, Any]
    action: str = "reject"
    _regex: Optional[re.Pattern] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not isinstance(self.rule_id, str) or not self.rule_id:
            raise MalformedRule("rule_id must be a nonempty string")
        if self.target not in TARGETS:
            raise MalformedRule(f"rule {self.rule_id}: target must be one of {TARGETS}")
        if self.action not in ACTIONS:
            raise MalformedRule(f"rule {self.rule_id}: action must be one of {ACTIONS}")
        scope = self.applies_to
        if not isinstance(scope, str) or not (
            scope == "global"
            or (scope.startswith("tool:") and len(scope) > 5)
            or (scope.startswith("tag:") and len(scope) > 4)
        ):
            raise MalformedRule(f"rule {self.rule_id}: applies_to must be global, tool:<id> or tag:<tag>")
        if not isinstance(self.constraint, dict):
            raise MalformedRule(f"rule {self.rule_id}: constraint must be an object")
        ctype = self.constraint.get("type")
        if ctype == "deny_pattern":
            pattern = self.constraint.get("pattern")
            if not isinstance(pattern, str):
                raise MalformedRule(f"rule {self.rule_id}: deny_pattern needs a string pattern")
            try:
                self._regex = re.compile(pattern)
            except re.error as exc:
                raise MalformedRule(f"rule {self.rule_id}: pattern does not compile: {exc}") from exc
        elif ctype == "max_payload_bytes":
            limit = self.constraint.get("limit")
            if not isinstance(limit, int) or isinstance(limit, bool) or limit < 0:
                raise MalformedRule(f"rule {self.rule_id}: max_payload_bytes needs a nonnegative integer limit")
        elif ctype == "require_field":
            path = self.constraint.get("path")
            if not isinstance(path, str) or not path.startswith("/"):
                raise MalformedRule(f"rule {self.rule_id}: require_field needs a path starting with '/'")
        else:
            raise MalformedRule(f"rule {self.rule_id}: constraint type must be one of {CONSTRAINT_TYPES}")

    @classmethod
    def from_dict(cls, data: Any) -> "ValidationRule":
        if not isinstance(data, dict):
            raise MalformedRule("rule must be an object")
        unknown = set(data) - {"rule_id", "target", "applies_to", "constraint", "action"}
        if unknown:
            raise MalformedRule(f"rule has unknown keys {sorted(unknown)}")
        try:
            return cls(
                rule_id=data["rule_id"],
                target=data["target"],
                applies_to=data.get("applies_to", "global"),
                constraint=dict(data["constraint"]) if isinstance(data.get("constraint"), dict) else data.get("constraint"),
                action=data.get("action", "reject"),
            )
        except KeyError as exc:
            raise MalformedRule(f"rule is missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "target": self.target,
            "applies_to": self.applies_to,
            "constraint": dict(self.constraint),
            "action": self.action,
        }

    def applies(self, tool_id: Optional[str], tags: Iterable[str] = ()) -> bool:
        """Whether this rule is in scope for a tool; with no tool only global rules are."""
        if self.applies_to == "global":
            return True
        if tool_id is None:
            return False
        if self.applies_to.startswith("tool:"):
            return self.applies_to[5:] == tool_id
        return self.applies_to[4:] in set(tags)


def _escape(name: str) -> str:
    return name.replace("~", "~0").replace("/", "~1")


def _unescape(token: str) -> str:
    return token.replace("~1", "/").replace("~0", "~")


def json_equal(a: Any, b: Any) -> bool:
    """Equality under JSON typing (``True`` is not ``1``)."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if _is_number(a) and _is_number(b):
        return a == b
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    return type(a) is type(b) and a == b


def _type_ok(kind: str, value: Any) -> bool:
    if kind == "object":
        return isinstance(value, dict)
    if kind == "string":
        return isinstance(value, str)
    if kind == "number":
        return _is_number(value)
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "array":
        return isinstance(value, list)
    return True


def _walk(value: Any, schema: SchemaNode, path: str, out: list[Violation]) -> None:
    if schema.kind == "any":
        return
    if not _type_ok(schema.kind, value):
        out.append(Violation(path, "type_mismatch", f"expected {schema.kind}, got {type(value).__name__}"))
        return
    if schema.enum is not None and not any(json_equal(value, option) for option in schema.enum):
        out.append(Violation(path, "enum_mismatch", f"value not in {schema.enum!r}"))
    if schema.kind in ("number", "integer"):
        if schema.minimum is not None and value < schema.minimum:
            out.append(Violation(path, "out_of_range", f"{value} < minimum {schema.minimum}"))
        if schema.maximum is not None and value > schema.maximum:
            out.append(Violation(path, "out_of_range", f"{value} > maximum {schema.maximum}"))
    elif schema.kind == "string":
        if schema.max_length is not None and len(value) > schema.max_length:
            out.append(Violation(path, "too_long", f"length {len(value)} > {schema.max_length}"))
    elif schema.kind == "object":
        required = set(schema.required)
        for name, sub in schema.properties.items():
            child = f"{path}/{_escape(name)}"
            if name in value:
                _walk(value[name], sub, child, out)
            elif name in required:
                out.append(Violation(child, "missing_required", f"required field {name!r} is missing"))
    elif schema.kind == "array" and schema.items is not None:
        for index, element in enumerate(value):
            _walk(element, schema.items, f"{path}/{index}", out)


def validate_schema(value: Any, schema: SchemaNode) -> Verdict:
    """Check ``value`` against ``schema``.

    Every node is visited even after a failure, so the verdict lists all
    violations. Object members are checked in the schema's declaration order
    and array elements by index; paths are JSON-pointer style (root is ``""``).
    """
    out: list[Violation] = []
    _walk(value, schema, "", out)
    return Verdict(out)


def serialize_payload(payload: Any) -> str:
    """Canonical text form that content rules are evaluated against."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _lookup(payload: Any, path: str) -> bool:
    node = payload
    for token in path.split("/")[1:]:
        token = _unescape(token)
        if isinstance(node, dict) and token in node:
            node = node[token]
        elif isinstance(node, list) and token.isdigit() and int(token) < len(node):
            node = node[int(token)]
        else:
            return False
    return True


def _apply_rule(payload: Any, text: str, rule: ValidationRule) -> Optional[Violation]:
    ctype = rule.constraint["type"]
    if ctype == "deny_pattern":
        if rule._regex.search(text):
            return Violation("", "policy_deny", f"payload matches deny pattern of rule {rule.rule_id}", rule.action)
    elif ctype == "max_payload_bytes":
        size = len(text.encode("utf-8"))
        if size > rule.constraint["limit"]:
            return Violation(
                "", "payload_too_large",
                f"payload is {size} bytes, rule {rule.rule_id} allows {rule.constraint['limit']}",
                rule.action,
            )
    elif ctype == "require_field":
        path = rule.constraint["path"]
        if not _lookup(payload, path):
            return Violation(path, "missing_field", f"rule {rule.rule_id} requires {path}", rule.action)
    return None


def rules_in_scope(rules: Iterable[ValidationRule], target: str, tools: Iterable[Any] = ()) -> list[ValidationRule]:
    """Rules for ``target`` that apply globally or to any of ``tools`` (order kept)."""
    tools = list(tools)
    return [
        rule
        for rule in rules
        if rule.target == target
        and (rule.applies_to == "global" or any(rule.applies(t.tool_id, t.tags) for t in tools))
    ]


def apply_rules(payload: Any, rules: Iterable[ValidationRule]) -> Verdict:
    """Evaluate ``rules`` against ``payload`` without any scope filtering."""
    text = None
    out: list[Violation] = []
    for rule in rules:
        if text is None:
            text = serialize_payload(payload)
        violation = _apply_rule(payload, text, rule)
        if violation is not None:
            out.append(violation)
    return Verdict(out)


def check_rules(
    payload: Any,
    rules: Iterable[ValidationRule],
    target: str,
    tool_id: Optional[str] = None,
    tags: Iterable[str] = (),
) -> Verdict:
    """Apply the in-scope ``target`` rules, in the order given; no tool means global rules only."""
    tags = tuple(tags)
    return apply_rules(payload, [r for r in rules if r.target == target and r.applies(tool_id, tags)])


def check_input(payload: Any, tool, rules: Iterable[ValidationRule]) -> Verdict:
    return validate_schema(payload, tool.input_schema) + check_rules(payload, rules, "input", tool.tool_id, tool.tags)


def check_output(payload: Any, tool, rules: Iterable[ValidationRule]) -> Verdict:
    return validate_schema(payload, tool.output_schema) + check_rules(payload, rules, "output", tool.tool_id, tool.tags)
