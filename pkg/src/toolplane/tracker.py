"""Usage Tracker: append-only JSON Lines audit log and usage aggregation.

Each invocation, including rejected ones, becomes exactly one record. A record
is written (and optionally fsynced) before the caller gets its response, and
sequence numbers are gapless across process restarts.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from toolplane.errors import IoFailure

log = logging.getLogger(__name__)

OUTCOMES = ("ok", "rejected_input", "no_match", "aborted", "rejected_output")


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class InvocationRecord:
    request_id: str
    agent_id: str
    intent: str
    outcome: str
    seq: int = 0
    timestamp: str = field(default_factory=utc_timestamp)
    error_code: Optional[str] = None
    context: dict[str, Any] = field(default_factory=dict)
    selected_tool: Optional[str] = None
    decision: Optional[dict[str, Any]] = None
    input_verdict: Optional[dict[str, Any]] = None
    output_verdict: Optional[dict[str, Any]] = None
    steps: list[dict[str, Any]] = field(default_factory=list)
    total_latency_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InvocationRecord":
        return cls(**data)

    def plan_tools(self) -> list[str]:
        if self.decision and self.decision.get("plan"):
            return [s["tool_id"] for s in self.decision["plan"]]
        return []

    def touches(self, tool_id: str) -> bool:
        return (
            self.selected_tool == tool_id
            or tool_id in self.plan_tools()
            or any(s["tool_id"] == tool_id for s in self.steps)
        )


def nearest_rank(values: Sequence[float], percent: int) -> float:
    """Nearest-rank percentile: the smallest value with at least ``percent``% of data at or below it."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, -(-percent * len(ordered) // 100))
    return ordered[rank - 1]


@dataclass
class ToolStats:
    count: int = 0
    success_count: int = 0
    success_rate: float = 0.0
    latency_p50: float = 0.0
    latency_p95: float = 0.0


@dataclass
class AgentStats:
    request_count: int = 0
    outcomes: dict[str, int] = field(default_factory=dict)


@dataclass
class UsageStats:
    tools: dict[str, ToolStats] = field(default_factory=dict)
    agents: dict[str, AgentStats] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tools": {k: asdict(v) for k, v in sorted(self.tools.items())},
            "agents": {k: asdict(v) for k, v in sorted(self.agents.items())},
            "metrics": dict(sorted(self.metrics.items())),
        }


def matches(
    record: InvocationRecord,
    agent_id: Optional[str] = None,
    tool_id: Optional[str] = None,
    outcome: Optional[str] = None,
    seq_range: Optional[tuple[int, int]] = None,
) -> bool:
    if agent_id is not None and record.agent_id != agent_id:
        return False
    if outcome is not None and record.outcome != outcome:
        return False
    if seq_range is not None and not seq_range[0] <= record.seq <= seq_range[1]:
        return False
    if tool_id is not None and not record.touches(tool_id):
        return False
    return True


def summarize(records: Iterable[InvocationRecord], tool_id: Optional[str] = None, metrics: Iterable[Any] = ()) -> UsageStats:
    """Usage statistics over ``records``; with ``tool_id`` only that tool's entry is kept."""
    records = list(records)
    latencies: dict[str, list[float]] = {}
    successes: dict[str, int] = {}
    agents: dict[str, AgentStats] = {}
    for record in records:
        stats = agents.setdefault(record.agent_id, AgentStats())
        stats.request_count += 1
        stats.outcomes[record.outcome] = stats.outcomes.get(record.outcome, 0) + 1
        for step in record.steps:
            tid = step["tool_id"]
            if tool_id is not None and tid != tool_id:
                continue
            latencies.setdefault(tid, []).append(round(sum(step["latency_ms"]), 3))
            successes[tid] = successes.get(tid, 0) + (step["status"] == "ok")
    tools = {}
    for tid, values in latencies.items():
        count = len(values)
        tools[tid] = ToolStats(
            count=count,
            success_count=successes[tid],
            success_rate=successes[tid] / count if count else 0.0,
            latency_p50=nearest_rank(values, 50),
            latency_p95=nearest_rank(values, 95),
        )
    metric_values: dict[str, Any] = {}
    for metric in metrics:
        if metric.kind == "counter":
            metric_values[metric.metric_id] = {"kind": "counter", "value": len(records)}
        else:
            totals = [r.total_latency_ms for r in records]
            metric_values[metric.metric_id] = {
                "kind": "latency",
                "p50": nearest_rank(totals, 50),
                "p95": nearest_rank(totals, 95),
            }
    return UsageStats(tools=tools, agents=agents, metrics=metric_values)


class AuditLog:
    """Append-only invocation log, in memory and optionally mirrored to a JSONL file."""

    def __init__(self, path: Optional[str | os.PathLike] = None, fsync: bool = True) -> None:
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._lock = threading.Lock()
        self._records: list[InvocationRecord] = []
        self._by_request: dict[str, InvocationRecord] = {}
        self._handle = None
        if self.path is not None:
            self._load()
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._handle = open(self.path, "a", encoding="utf-8")
            except OSError as exc:
                raise IoFailure(f"cannot open audit log {self.path}: {exc}") from exc

    def _load(self) -> None:
        try:
            raw = self.path.read_bytes()
        except FileNotFoundError:
            return
        except OSError as exc:
            raise IoFailure(f"cannot read audit log {self.path}: {exc}") from exc
        lines = raw.split(b"\n")
        tail = lines.pop()  # b"" when the file ends in a newline
        for number, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                record = InvocationRecord.from_dict(json.loads(line.decode("utf-8")))
            except (ValueError, TypeError) as exc:
                raise IoFailure(f"audit log {self.path} line {number} is corrupt: {exc}") from exc
            self._remember(record)
        if tail:
            # torn final write: its append never returned, so the record was never acknowledged
            log.warning("dropping incomplete final line in %s", self.path)
            try:
                with open(self.path, "r+b") as handle:
                    handle.truncate(len(raw) - len(tail))
            except OSError as exc:
                raise IoFailure(f"cannot repair audit log {self.path}: {exc}") from exc
        for expected, record in enumerate(self._records, 1):
            if record.seq != expected:
                raise IoFailure(f"audit log {self.path} has a sequence gap at {expected}")

    def _remember(self, record: InvocationRecord) -> None:
        self._records.append(record)
        self._by_request.setdefault(record.request_id, record)

    @property
    def last_seq(self) -> int:
        return self._records[-1].seq if self._records else 0

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: InvocationRecord) -> int:
        """Assign the next seq, persist the record, and return the seq."""
        with self._lock:
            record.seq = self.last_seq + 1
            if self._handle is not None:
                line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
                try:
                    self._handle.write(line + "\n")
                    self._handle.flush()
                    if self.fsync:
                        os.fsync(self._handle.fileno())
                except OSError as exc:
                    record.seq = 0
                    raise IoFailure(f"cannot append to audit log {self.path}: {exc}") from exc
            self._remember(record)
            return record.seq

    def records(self) -> list[InvocationRecord]:
        return list(self._records)

    def find_request(self, request_id: str) -> Optional[InvocationRecord]:
        return self._by_request.get(request_id)

    def request_ids(self) -> set[str]:
        return set(self._by_request)

    def query(
        self,
        agent_id: Optional[str] = None,
        tool_id: Optional[str] = None,
        outcome: Optional[str] = None,
        seq_range: Optional[tuple[int, int]] = None,
    ) -> list[InvocationRecord]:
        return [r for r in self.records() if matches(r, agent_id, tool_id, outcome, seq_range)]

    def aggregate(
        self,
        agent_id: Optional[str] = None,
        tool_id: Optional[str] = None,
        outcome: Optional[str] = None,
        seq_range: Optional[tuple[int, int]] = None,
        metrics: Iterable[Any] = (),
    ) -> UsageStats:
        return summarize(self.query(agent_id, tool_id, outcome, seq_range), tool_id, metrics)

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None
