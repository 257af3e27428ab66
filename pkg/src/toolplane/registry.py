"""Registration Module: tools, agents, validation rules and metric definitions.

The registry is copy-on-write. Each successful mutation builds a new
:class:`RegistryView` and swaps it in under a lock, so readers always see a
complete generation and failed mutations leave nothing behind.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from toolplane.endpoints import EndpointSpec, FallbackPolicy
from toolplane.errors import (
    CorruptSnapshot,
    DependencyCycle,
    DuplicateId,
    HasDependents,
    InvalidRequest,
    IoFailure,
    NotFound,
    ToolplaneError,
    UnknownDependency,
)
from toolplane.validation import SchemaNode, ValidationRule

log = logging.getLogger(__name__)

TOOL_ID_RE = re.compile(r"[a-z0-9_.-]+")
AGENT_ID_RE = re.compile(r"[A-Za-z0-9_.:-]+")
METRIC_KINDS = ("counter", "latency")


def _str_list(data: Mapping[str, Any], key: str, owner: str) -> list[str]:
    value = data.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise InvalidRequest(f"{owner}: {key} must be a list of strings")
    return list(value)


def _check_keys(data: Any, allowed: set[str], owner: str) -> None:
    if not isinstance(data, dict):
        raise InvalidRequest(f"{owner} must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise InvalidRequest(f"{owner} has unknown keys {sorted(unknown)}")


@dataclass
class ToolDescriptor:
    tool_id: str
    endpoint: EndpointSpec
    name: str = ""
    description: str = ""
    tags: list[str] = field(default_factory=list)
    input_schema: SchemaNode = field(default_factory=SchemaNode)
    output_schema: SchemaNode = field(default_factory=SchemaNode)
    dependencies: list[str] = field(default_factory=list)
    fallback: Optional[FallbackPolicy] = None
    enabled: bool = True
    version: int = 1

    _KEYS = {
        "tool_id", "name", "description", "tags", "input_schema", "output_schema",
        "endpoint", "dependencies", "fallback", "enabled", "version",
    }

    def __post_init__(self) -> None:
        if not self.name:
            self.name = self.tool_id

    @classmethod
    def from_dict(cls, data: Any) -> "ToolDescriptor":
        _check_keys(data, cls._KEYS, "tool descriptor")
        tool_id = data.get("tool_id")
        if not isinstance(tool_id, str) or not TOOL_ID_RE.fullmatch(tool_id):
            raise InvalidRequest(f"tool_id {tool_id!r} must match [a-z0-9_.-]+")
        if "endpoint" not in data:
            raise InvalidRequest(f"tool {tool_id}: endpoint is required")
        for key in ("name", "description"):
            if not isinstance(data.get(key, ""), str):
                raise InvalidRequest(f"tool {tool_id}: {key} must be a string")
        enabled = data.get("enabled", True)
        if not isinstance(enabled, bool):
            raise InvalidRequest(f"tool {tool_id}: enabled must be a boolean")
        version = data.get("version", 1)
        if not isinstance(version, int) or isinstance(version, bool) or version < 1:
            raise InvalidRequest(f"tool {tool_id}: version must be a positive integer")
        dependencies = _str_list(data, "dependencies", f"tool {tool_id}")
        if len(set(dependencies)) != len(dependencies):
            raise InvalidRequest(f"tool {tool_id}: duplicate dependencies")
        fallback = data.get("fallback")
        return cls(
            tool_id=tool_id,
            name=data.get("name") or tool_id,
            description=data.get("description", ""),
            tags=_str_list(data, "tags", f"tool {tool_id}"),
            input_schema=SchemaNode.from_dict(data.get("input_schema", {"kind": "any"})),
            output_schema=SchemaNode.from_dict(data.get("output_schema", {"kind": "any"})),
            endpoint=EndpointSpec.from_dict(data["endpoint"]),
            dependencies=dependencies,
            fallback=FallbackPolicy.from_dict(fallback) if fallback is not None else None,
            enabled=enabled,
            version=version,
        )

    def to_dict(self) -> dict[str, Any]:
        out = {
            "tool_id": self.tool_id,
            "name": self.name,
            "description": self.description,
            "tags": list(self.tags),
            "input_schema": self.input_schema.to_dict(),
            "output_schema": self.output_schema.to_dict(),
            "endpoint": self.endpoint.to_dict(),
            "dependencies": list(self.dependencies),
            "enabled": self.enabled,
            "version": self.version,
        }
        if self.fallback is not None:
            out["fallback"] = self.fallback.to_dict()
        return out


@dataclass
class AgentDescriptor:
    agent_id: str
    display_name: str = ""
    allowed_tags: list[str] = field(default_factory=list)  # empty: every tag allowed
    denied_tools: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.display_name:
            self.display_name = self.agent_id

    @classmethod
    def from_dict(cls, data: Any) -> "AgentDescriptor":
        _check_keys(data, {"agent_id", "display_name", "allowed_tags", "denied_tools"}, "agent descriptor")
        agent_id = data.get("agent_id")
        if not isinstance(agent_id, str) or not AGENT_ID_RE.fullmatch(agent_id):
            raise InvalidRequest(f"agent_id {agent_id!r} must match [A-Za-z0-9_.:-]+")
        display_name = data.get("display_name") or agent_id
        if not isinstance(display_name, str):
            raise InvalidRequest(f"agent {agent_id}: display_name must be a string")
        return cls(
            agent_id=agent_id,
            display_name=display_name,
            allowed_tags=_str_list(data, "allowed_tags", f"agent {agent_id}"),
            denied_tools=_str_list(data, "denied_tools", f"agent {agent_id}"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "display_name": self.display_name,
            "allowed_tags": list(self.allowed_tags),
            "denied_tools": list(self.denied_tools),
        }


@dataclass
class MetricDefinition:
    metric_id: str
    kind: str
    description: str = ""

    @classmethod
    def from_dict(cls, data: Any) -> "MetricDefinition":
        _check_keys(data, {"metric_id", "kind", "description"}, "metric definition")
        metric_id = data.get("metric_id")
        if not isinstance(metric_id, str) or not AGENT_ID_RE.fullmatch(metric_id):
            raise InvalidRequest(f"metric_id {metric_id!r} is not a valid identifier")
        if data.get("kind") not in METRIC_KINDS:
            raise InvalidRequest(f"metric {metric_id}: kind must be one of {METRIC_KINDS}")
        if not isinstance(data.get("description", ""), str):
            raise InvalidRequest(f"metric {metric_id}: description must be a string")
        return cls(metric_id, data["kind"], data.get("description", ""))

    def to_dict(self) -> dict[str, Any]:
        return {"metric_id": self.metric_id, "kind": self.kind, "description": self.description}


def find_cycle(graph: Mapping[str, Iterable[str]]) -> Optional[list[str]]:
    """Return one dependency cycle as a node list, or None if the graph is a DAG."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node: WHITE for node in graph}
    for root in sorted(graph):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(sorted(graph[root])))]
        path = [root]
        color[root] = GREY
        while stack:
            node, children = stack[-1]
            child = next(children, None)
            if child is None:
                stack.pop()
                path.pop()
                color[node] = BLACK
            elif color.get(child, BLACK) == GREY:
                return path[path.index(child):] + [child]
            elif color.get(child) == WHITE:
                color[child] = GREY
                path.append(child)
                stack.append((child, iter(sorted(graph[child]))))
    return None


@dataclass(frozen=True)
class RegistryView:
    """One immutable generation of registry state. Do not mutate its contents."""

    tools: Mapping[str, ToolDescriptor]
    agents: Mapping[str, AgentDescriptor]
    rules: Mapping[str, ValidationRule]
    metrics: Mapping[str, MetricDefinition]
    generation: int = 0

    def rule_list(self) -> list[ValidationRule]:
        return list(self.rules.values())


@dataclass
class RegistrySnapshot:
    tools: list[ToolDescriptor] = field(default_factory=list)
    agents: list[AgentDescriptor] = field(default_factory=list)
    rules: list[ValidationRule] = field(default_factory=list)
    metrics: list[MetricDefinition] = field(default_factory=list)
    snapshot_seq: int = 0
    preferences: list[dict[str, Any]] = field(default_factory=list)

    def body(self) -> dict[str, Any]:
        return {
            "tools": [t.to_dict() for t in self.tools],
            "agents": [a.to_dict() for a in self.agents],
            "rules": [r.to_dict() for r in self.rules],
            "metrics": [m.to_dict() for m in self.metrics],
            "snapshot_seq": self.snapshot_seq,
            "preferences": copy.deepcopy(self.preferences),
        }


def _checksum(body: Mapping[str, Any]) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_snapshot(snapshot: RegistrySnapshot, path: str | os.PathLike) -> None:
    """Write ``snapshot`` atomically: temp file in the same directory, then rename."""
    path = Path(path)
    body = snapshot.body()
    document = dict(body, checksum=_checksum(body))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(document, handle, indent=1, ensure_ascii=False)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc


def load_snapshot(path: str | os.PathLike) -> RegistrySnapshot:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read snapshot {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CorruptSnapshot(f"snapshot {path} is not UTF-8") from exc
    try:
        document = json.loads(text)
    except ValueError as exc:
        raise CorruptSnapshot(f"snapshot {path} does not parse: {exc}") from exc
    if not isinstance(document, dict) or "checksum" not in document:
        raise CorruptSnapshot(f"snapshot {path} lacks a checksum")
    checksum = document.pop("checksum")
    if checksum != _checksum(document):
        raise CorruptSnapshot(f"snapshot {path} fails its checksum")
    try:
        seq = document["snapshot_seq"]
        if not isinstance(seq, int):
            raise InvalidRequest("snapshot_seq must be an integer")
        return RegistrySnapshot(
            tools=[ToolDescriptor.from_dict(t) for t in document["tools"]],
            agents=[AgentDescriptor.from_dict(a) for a in document["agents"]],
            rules=[ValidationRule.from_dict(r) for r in document["rules"]],
            metrics=[MetricDefinition.from_dict(m) for m in document["metrics"]],
            snapshot_seq=seq,
            preferences=list(document.get("preferences", [])),
        )
    except (KeyError, TypeError, ToolplaneError) as exc:
        raise CorruptSnapshot(f"snapshot {path} has invalid content: {exc}") from exc


class Registry:
    """Thread-safe registry with serialized, all-or-nothing mutations."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._view = RegistryView({}, {}, {}, {}, 0)
        self._snapshot_seq = 0

    def view(self) -> RegistryView:
        return self._view

    @property
    def generation(self) -> int:
        return self._view.generation

    def _commit(self, **changes: Any) -> None:
        current = self._view
        fields = {
            "tools": current.tools,
            "agents": current.agents,
            "rules": current.rules,
            "metrics": current.metrics,
        }
        fields.update(changes)
        self._view = RegistryView(generation=current.generation + 1, **fields)

    @staticmethod
    def _check_references(tools: Mapping[str, ToolDescriptor]) -> None:
        for tool in tools.values():
            for dep in tool.dependencies:
                if dep not in tools:
                    raise UnknownDependency(f"tool {tool.tool_id} depends on unregistered tool {dep!r}")
            fb = tool.fallback.fallback_tool if tool.fallback else None
            if fb is not None and (fb not in tools or fb == tool.tool_id):
                raise UnknownDependency(f"tool {tool.tool_id} names invalid fallback tool {fb!r}")
        cycle = find_cycle({tid: t.dependencies for tid, t in tools.items()})
        if cycle:
            raise DependencyCycle("dependency cycle: " + " -> ".join(cycle))

    def register_tool(self, desc: ToolDescriptor) -> str:
        desc = copy.deepcopy(desc)
        desc.version = 1
        with self._lock:
            tools = self._view.tools
            if desc.tool_id in tools:
                raise DuplicateId(f"tool {desc.tool_id!r} is already registered")
            new_tools = dict(tools)
            new_tools[desc.tool_id] = desc
            self._check_references(new_tools)
            self._commit(tools=new_tools)
        log.info("registered tool %s", desc.tool_id)
        return desc.tool_id

    def update_tool(self, tool_id: str, desc: ToolDescriptor) -> int:
        desc = copy.deepcopy(desc)
        if desc.tool_id != tool_id:
            raise InvalidRequest(f"descriptor tool_id {desc.tool_id!r} does not match {tool_id!r}")
        with self._lock:
            tools = self._view.tools
            if tool_id not in tools:
                raise NotFound(f"tool {tool_id!r} is not registered")
            desc.version = tools[tool_id].version + 1
            new_tools = dict(tools)
            new_tools[tool_id] = desc
            self._check_references(new_tools)
            self._commit(tools=new_tools)
        return desc.version

    def deregister_tool(self, tool_id: str) -> ToolDescriptor:
        with self._lock:
            tools = self._view.tools
            if tool_id not in tools:
                raise NotFound(f"tool {tool_id!r} is not registered")
            dependents = sorted(
                t.tool_id
                for t in tools.values()
                if tool_id in t.dependencies or (t.fallback and t.fallback.fallback_tool == tool_id)
            )
            if dependents:
                raise HasDependents(f"tool {tool_id!r} is still used by {dependents}")
            new_tools = dict(tools)
            removed = new_tools.pop(tool_id)
            self._commit(tools=new_tools)
        return copy.deepcopy(removed)

    def get_tool(self, tool_id: str) -> ToolDescriptor:
        try:
            return copy.deepcopy(self._view.tools[tool_id])
        except KeyError:
            raise NotFound(f"tool {tool_id!r} is not registered") from None

    def list_tools(self, tag_filter: Optional[str] = None) -> list[ToolDescriptor]:
        tools = self._view.tools
        return [
            copy.deepcopy(tools[tid])
            for tid in sorted(tools)
            if tag_filter is None or tag_filter in tools[tid].tags
        ]

    def register_agent(self, desc: AgentDescriptor) -> str:
        desc = copy.deepcopy(desc)
        with self._lock:
            if desc.agent_id in self._view.agents:
                raise DuplicateId(f"agent {desc.agent_id!r} is already registered")
            self._commit(agents={**self._view.agents, desc.agent_id: desc})
        return desc.agent_id

    def get_agent(self, agent_id: str) -> AgentDescriptor:
        try:
            return copy.deepcopy(self._view.agents[agent_id])
        except KeyError:
            raise NotFound(f"agent {agent_id!r} is not registered") from None

    def list_agents(self) -> list[AgentDescriptor]:
        agents = self._view.agents
        return [copy.deepcopy(agents[a]) for a in sorted(agents)]

    def register_rule(self, rule: ValidationRule) -> str:
        with self._lock:
            if rule.rule_id in self._view.rules:
                raise DuplicateId(f"rule {rule.rule_id!r} is already registered")
            self._commit(rules={**self._view.rules, rule.rule_id: rule})
        return rule.rule_id

    def list_rules(self) -> list[ValidationRule]:
        return self._view.rule_list()

    def register_metric(self, metric: MetricDefinition) -> str:
        with self._lock:
            if metric.metric_id in self._view.metrics:
                raise DuplicateId(f"metric {metric.metric_id!r} is already registered")
            self._commit(metrics={**self._view.metrics, metric.metric_id: copy.deepcopy(metric)})
        return metric.metric_id

    def list_metrics(self) -> list[MetricDefinition]:
        metrics = self._view.metrics
        return [copy.deepcopy(metrics[m]) for m in sorted(metrics)]

    def snapshot(self, preferences: Optional[list[dict[str, Any]]] = None) -> RegistrySnapshot:
        view = self._view
        return RegistrySnapshot(
            tools=[copy.deepcopy(view.tools[t]) for t in sorted(view.tools)],
            agents=[copy.deepcopy(view.agents[a]) for a in sorted(view.agents)],
            rules=list(view.rules.values()),
            metrics=[copy.deepcopy(view.metrics[m]) for m in sorted(view.metrics)],
            snapshot_seq=self._snapshot_seq,
            preferences=copy.deepcopy(preferences or []),
        )

    def save_snapshot(self, path: str | os.PathLike, preferences: Optional[list[dict[str, Any]]] = None) -> RegistrySnapshot:
        with self._lock:
            self._snapshot_seq += 1
            snap = self.snapshot(preferences)
            save_snapshot(snap, path)
        return snap

    def load_snapshot(self, path: str | os.PathLike) -> RegistrySnapshot:
        """Replace the registry contents with the snapshot at ``path``."""
        snap = load_snapshot(path)
        self.restore(snap)
        return snap

    def restore(self, snap: RegistrySnapshot) -> None:
        tools = {t.tool_id: copy.deepcopy(t) for t in snap.tools}
        agents = {a.agent_id: copy.deepcopy(a) for a in snap.agents}
        rules = {r.rule_id: r for r in snap.rules}
        metrics = {m.metric_id: copy.deepcopy(m) for m in snap.metrics}
        if len(tools) != len(snap.tools) or len(agents) != len(snap.agents) or len(rules) != len(snap.rules):
            raise CorruptSnapshot("snapshot contains duplicate identifiers")
        try:
            self._check_references(tools)
        except ToolplaneError as exc:
            raise CorruptSnapshot(f"snapshot violates registry invariants: {exc}") from exc
        with self._lock:
            self._commit(tools=tools, agents=agents, rules=rules, metrics=metrics)
            self._snapshot_seq = max(self._snapshot_seq, snap.snapshot_seq)
