"""The control plane itself: the Request Router tying every module together.

:class:`ControlPlane` is transport-independent; :mod:`toolplane.api` exposes it
over HTTP. ``handle_invoke`` runs the invocation pipeline in a fixed order:

1. decode and check the envelope
2. look up the agent
3. apply global input rules to ``args`` (before any scoring)
4. route: score, select, plan
5. check ``args`` against the selected tool's input schema and scoped rules
6. execute the plan
7. validate the final output
8. append exactly one audit record, then respond
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from pathlib import Path
from typing import Any, Optional

from pydantic import ValidationError

from toolplane import router
from toolplane.config import Config
from toolplane.errors import (
    AbortedAtStep,
    InputRejected,
    InvalidRequest,
    NoMatchingTool,
    OutputRejected,
    ToolplaneError,
    UnknownAgent,
    UnknownRequest,
)
from toolplane.executor import Executor
from toolplane.feedback import FeedbackEvent, PreferenceTable, record_feedback
from toolplane.models import MANIFEST_BYTES, FeedbackRequest, InvocationRequest, InvocationResponse
from toolplane.registry import AgentDescriptor, MetricDefinition, Registry, ToolDescriptor
from toolplane.resolver import IntentQuery, Scorer, make_scorer
from toolplane.tracker import AuditLog, InvocationRecord
from toolplane.validation import Verdict, ValidationRule, check_input, check_output, check_rules

log = logging.getLogger(__name__)

AUDIT_FILE = "audit.jsonl"
SNAPSHOT_FILE = "registry.json"

# error code -> audit outcome
OUTCOME_FOR = {
    "invalid_request": "rejected_input",
    "unknown_agent": "rejected_input",
    "input_rejected": "rejected_input",
    "no_matching_tool": "no_match",
    "execution_failed": "aborted",
    "output_rejected": "rejected_output",
    "internal": "aborted",
}

HTTP_STATUS_FOR = {"invalid_request": 400, "internal": 500}


def http_status(code: Optional[str]) -> int:
    return HTTP_STATUS_FOR.get(code, 200) if code else 200


def _verdict_summary(verdict: Optional[Verdict]) -> Optional[dict[str, Any]]:
    return verdict.to_dict() if verdict is not None else None


class ControlPlane:
    def __init__(
        self,
        data_dir: Optional[str | os.PathLike] = None,
        config: Optional[Config] = None,
        executor: Optional[Executor] = None,
        scorer: Optional[Scorer] = None,
    ) -> None:
        self.config = config or Config()
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.registry = Registry()
        self.prefs = PreferenceTable(alpha=self.config.alpha)
        self.executor = executor or Executor()
        self.scorer = scorer or make_scorer(self.config.w_lex, self.config.w_pref)
        self.feedback_events: list[FeedbackEvent] = []
        self._persist_lock = threading.Lock()
        self._ids_lock = threading.Lock()
        self.snapshot_path = self.data_dir / SNAPSHOT_FILE if self.data_dir else None
        if self.snapshot_path is not None and self.snapshot_path.exists():
            snap = self.registry.load_snapshot(self.snapshot_path)
            self.prefs.load_list(snap.preferences)
        self.log = AuditLog(self.data_dir / AUDIT_FILE if self.data_dir else None, fsync=self.config.fsync)
        self._seen_ids = self.log.request_ids()

    @classmethod
    def from_env(cls, config: Optional[Config] = None) -> "ControlPlane":
        return cls(os.environ.get("TOOLPLANE_DATA_DIR") or None, config)

    def close(self) -> None:
        self.log.close()

    def _persist(self) -> None:
        if self.snapshot_path is None:
            return
        with self._persist_lock:
            self.registry.save_snapshot(self.snapshot_path, self.prefs.to_list())

    # -- registration ------------------------------------------------------

    def register_tool(self, data: Any) -> dict[str, Any]:
        tool_id = self.registry.register_tool(ToolDescriptor.from_dict(data))
        self._persist()
        return {"tool_id": tool_id, "version": 1}

    def update_tool(self, tool_id: str, data: Any) -> dict[str, Any]:
        if isinstance(data, dict):
            data = {"tool_id": tool_id, **data}
        version = self.registry.update_tool(tool_id, ToolDescriptor.from_dict(data))
        self._persist()
        return {"tool_id": tool_id, "version": version}

    def deregister_tool(self, tool_id: str) -> dict[str, Any]:
        removed = self.registry.deregister_tool(tool_id)
        self._persist()
        return {"tool_id": tool_id, "removed": removed.to_dict()}

    def register_agent(self, data: Any) -> dict[str, Any]:
        agent_id = self.registry.register_agent(AgentDescriptor.from_dict(data))
        self._persist()
        return {"agent_id": agent_id}

    def register_rule(self, data: Any) -> dict[str, Any]:
        rule_id = self.registry.register_rule(ValidationRule.from_dict(data))
        self._persist()
        return {"rule_id": rule_id}

    def register_metric(self, data: Any) -> dict[str, Any]:
        metric_id = self.registry.register_metric(MetricDefinition.from_dict(data))
        self._persist()
        return {"metric_id": metric_id}

    def list_tools(self, tag: Optional[str] = None) -> list[dict[str, Any]]:
        return [t.to_dict() for t in self.registry.list_tools(tag)]

    def get_tool(self, tool_id: str) -> dict[str, Any]:
        return self.registry.get_tool(tool_id).to_dict()

    def list_agents(self) -> list[dict[str, Any]]:
        return [a.to_dict() for a in self.registry.list_agents()]

    def list_rules(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.registry.list_rules()]

    def manifest(self) -> bytes:
        return MANIFEST_BYTES

    # -- invocation --------------------------------------------------------

    def _reserve_request_id(self, request_id: Optional[str]) -> str:
        with self._ids_lock:
            if request_id is None:
                request_id = str(uuid.uuid4())
                while request_id in self._seen_ids:
                    request_id = str(uuid.uuid4())
            elif request_id in self._seen_ids:
                raise InvalidRequest(f"request_id {request_id!r} was already used")
            self._seen_ids.add(request_id)
            return request_id

    def handle_invoke_bytes(self, body: bytes) -> InvocationResponse:
        try:
            payload = json.loads(body)
        except (ValueError, UnicodeDecodeError):
            payload = _Undecodable
        return self.handle_invoke(payload)

    def handle_invoke(self, payload: Any) -> InvocationResponse:
        started = time.perf_counter()
        raw = payload if isinstance(payload, dict) else {}
        record = InvocationRecord(
            request_id=raw.get("request_id") if isinstance(raw.get("request_id"), str) else "",
            agent_id=raw.get("agent_id") if isinstance(raw.get("agent_id"), str) else "",
            intent=raw.get("intent") if isinstance(raw.get("intent"), str) else "",
            outcome="ok",
        )
        decision = None
        output: Any = None
        reserved = False
        try:
            # 1. envelope
            if payload is _Undecodable:
                raise InvalidRequest("request body is not a JSON document")
            try:
                req = InvocationRequest.model_validate(payload)
            except ValidationError as exc:
                problems = "; ".join(
                    f"{'.'.join(str(p) for p in e['loc']) or 'body'}: {e['msg']}" for e in exc.errors()
                )
                raise InvalidRequest(f"invalid invocation envelope: {problems}") from None
            record.context = req.context
            record.request_id = self._reserve_request_id(req.request_id)
            reserved = True
            view = self.registry.view()
            rules = view.rule_list()
            # 2-4. agent lookup, global input policy, routing
            if req.agent_id not in view.agents:
                raise UnknownAgent(f"agent {req.agent_id!r} is not registered")
            agent = view.agents[req.agent_id]
            verdict = check_rules(req.args, rules, "input")
            record.input_verdict = verdict.to_dict()
            if not verdict.ok:
                raise InputRejected(_first_reject(verdict))
            query = IntentQuery(req.agent_id, req.intent, req.context)
            try:
                decision = router.plan(
                    query, view, self.prefs, self.config.no_match_threshold, record.request_id, self.scorer
                )
            except NoMatchingTool as exc:
                record.decision = {
                    "selected_tool": None,
                    "plan": [],
                    "candidates": [c.to_dict() for c in getattr(exc, "candidates", [])],
                    "threshold_used": self.config.no_match_threshold,
                    "excluded": getattr(exc, "excluded", {}),
                    "registry_generation": getattr(exc, "registry_generation", view.generation),
                }
                raise
            record.selected_tool = decision.selected_tool
            record.decision = decision.to_dict()
            # 5. tool-scoped input validation (global rules already applied)
            tool = view.tools[decision.selected_tool]
            scoped = [r for r in rules if r.applies_to != "global"]
            verdict = verdict + check_input(req.args, tool, scoped)
            record.input_verdict = verdict.to_dict()
            if not verdict.ok:
                raise InputRejected(_first_reject(verdict))
            # 6. execution
            try:
                results, output = self.executor.execute_plan(decision, req.args, view, rules, agent)
            except AbortedAtStep as exc:
                record.steps = [r.to_dict() for r in exc.results]
                last = exc.results[-1] if exc.results else None
                if last is not None and last.status == "output_rejected":
                    record.output_verdict = _verdict_summary(last.verdict)
                    raise OutputRejected(f"output of {last.tool_id} failed validation") from None
                raise
            record.steps = [r.to_dict() for r in results]
            # 7. final output validation
            out_verdict = check_output(output, tool, rules)
            record.output_verdict = out_verdict.to_dict()
            if not out_verdict.ok:
                raise OutputRejected(_first_reject(out_verdict))
        except ToolplaneError as exc:
            return self._finish(record, started, reserved, error=exc)
        except Exception as exc:  # noqa: BLE001 - every failure must still be logged
            log.exception("internal error while handling invocation")
            err = ToolplaneError(f"internal error: {type(exc).__name__}")
            return self._finish(record, started, reserved, error=err)
        return self._finish(record, started, reserved, output=output)

    def _finish(self, record: InvocationRecord, started: float, reserved: bool, output: Any = None,
                error: Optional[ToolplaneError] = None) -> InvocationResponse:
        code = error.code if error is not None else None
        record.outcome = OUTCOME_FOR.get(code, "aborted") if code else "ok"
        record.error_code = code
        record.total_latency_ms = round((time.perf_counter() - started) * 1000.0, 3)
        if not reserved:
            try:
                record.request_id = self._reserve_request_id(record.request_id or None)
            except InvalidRequest:
                pass  # a reused id: the record keeps it, the original stays the feedback target
        seq = self.log.append(record)  # IoFailure propagates: nothing is returned unlogged
        fields: dict[str, Any] = {"request_id": record.request_id, "audit_seq": seq}
        if record.selected_tool is not None:
            fields["selected_tool"] = record.selected_tool
        if error is None:
            return InvocationResponse(status="ok", output=output, **fields)
        return InvocationResponse(status="error", error={"code": code, "message": error.message}, **fields)

    # -- feedback, usage, audit --------------------------------------------

    def feedback(self, data: Any) -> dict[str, Any]:
        try:
            req = FeedbackRequest.model_validate(data)
        except ValidationError as exc:
            raise InvalidRequest(f"invalid feedback: {exc.errors()[0]['msg']}") from None
        event = FeedbackEvent(req.request_id, req.rating, req.comment)
        weight = record_feedback(event, self.log, self.prefs, enabled=self.config.feedback_enabled)
        self.feedback_events.append(event)
        self._persist()
        record = self.log.find_request(req.request_id)
        return {"request_id": req.request_id, "tool_id": record.selected_tool, "weight": weight}

    def usage(self, agent_id: Optional[str] = None, tool_id: Optional[str] = None,
              outcome: Optional[str] = None, seq_range: Optional[tuple[int, int]] = None) -> dict[str, Any]:
        stats = self.log.aggregate(agent_id, tool_id, outcome, seq_range, metrics=self.registry.list_metrics())
        return stats.to_dict()

    def audit(self, agent_id: Optional[str] = None, tool_id: Optional[str] = None,
              outcome: Optional[str] = None, seq_range: Optional[tuple[int, int]] = None) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.log.query(agent_id, tool_id, outcome, seq_range)]

    def explain(self, request_id: str) -> str:
        record = self.log.find_request(request_id)
        if record is None or not record.decision or record.selected_tool is None:
            raise UnknownRequest(f"request {request_id!r} has no routing decision to explain")
        return router.explain(router.RoutingDecision.from_dict(record.decision))


class _UndecodableType:
    pass


_Undecodable = _UndecodableType()


def _first_reject(verdict: Verdict) -> str:
    for v in verdict.violations:
        if v.action == "reject":
            return f"{v.code} at {v.path or '/'}: {v.message}"
    return "rejected"
