"""Plan execution and the Failure Handler.

A step is attempted up to ``max_retries + 1`` times with a fixed backoff.
When every attempt fails, recovery runs in this order: the fallback tool
(called once; its own fallback is never followed), then the configured
default response, then the step is reported as failed or timed out.

A step whose output is rejected by output validation is terminal: it is not
retried and does not fall back, since the tool did answer and recovering would
only hide a policy violation.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

from toolplane import endpoints
from toolplane.endpoints import EndpointSpec, FallbackPolicy
from toolplane.errors import AbortedAtStep, ToolInvocationError, ToolTimeout
from toolplane.registry import AgentDescriptor, RegistryView, ToolDescriptor
from toolplane.router import PlanStep, RoutingDecision, exclusion_reason
from toolplane.validation import ValidationRule, Verdict, apply_rules, rules_in_scope, validate_schema

log = logging.getLogger(__name__)

STATUSES = ("ok", "failed", "timed_out", "output_rejected", "fallback_used", "defaulted")
CONTINUE_STATUSES = frozenset({"ok", "defaulted", "fallback_used"})

Invoker = Callable[[EndpointSpec, Any], Any]


@dataclass
class StepResult:
    tool_id: str
    status: str
    attempts: int
    latency_ms: list[float] = field(default_factory=list)
    output: Any = None
    error: Optional[str] = None
    fallback_tool: Optional[str] = None
    verdict: Optional[Verdict] = None

    def to_dict(self) -> dict[str, Any]:
        out = {
            "tool_id": self.tool_id,
            "status": self.status,
            "attempts": self.attempts,
            "latency_ms": list(self.latency_ms),
        }
        if self.error is not None:
            out["error"] = self.error
        if self.fallback_tool is not None:
            out["fallback_tool"] = self.fallback_tool
        return out


def output_verdict(payload: Any, tools: Sequence[ToolDescriptor], rules: Sequence[ValidationRule]) -> Verdict:
    """Output check against every tool's schema and each in-scope rule once."""
    verdict = Verdict()
    for tool in tools:
        verdict = verdict + validate_schema(payload, tool.output_schema)
    return verdict + apply_rules(payload, rules_in_scope(rules, "output", tools))


class Executor:
    def __init__(
        self,
        invoker: Invoker = endpoints.invoke,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.invoker = invoker
        self.sleep = sleep
        self.clock = clock

    def _call(self, endpoint: EndpointSpec, payload: Any, latencies: list[float]) -> Any:
        start = self.clock()
        try:
            return self.invoker(endpoint, payload)
        finally:
            latencies.append(round((self.clock() - start) * 1000.0, 3))

    def execute_step(
        self,
        step: PlanStep,
        inputs: Any,
        tool: ToolDescriptor,
        rules: Sequence[ValidationRule] = (),
        tools: Optional[Mapping[str, ToolDescriptor]] = None,
        agent: Optional[AgentDescriptor] = None,
    ) -> StepResult:
        """Run one plan step; every outcome is encoded in the returned StepResult.

        ``tools`` is consulted to find the fallback tool. When ``agent`` is
        given, a fallback the agent is not allowed to use is skipped.
        """
        policy = tool.fallback or FallbackPolicy()
        latencies: list[float] = []
        last_error: Optional[ToolInvocationError] = None
        attempts = 0
        for attempt in range(policy.max_retries + 1):
            if attempt and policy.retry_backoff_ms:
                self.sleep(policy.retry_backoff_ms / 1000.0)
            attempts += 1
            try:
                output = self._call(tool.endpoint, inputs, latencies)
            except ToolInvocationError as exc:
                last_error = exc
                log.debug("step %s attempt %d failed: %s", tool.tool_id, attempts, exc)
                continue
            verdict = output_verdict(output, [tool], rules)
            if not verdict.ok:
                return StepResult(tool.tool_id, "output_rejected", attempts, latencies,
                                  error="output failed validation", verdict=verdict)
            return StepResult(tool.tool_id, "ok", attempts, latencies, output=output, verdict=verdict)

        error = f"{type(last_error).__name__}: {last_error}"
        fallback = (tools or {}).get(policy.fallback_tool) if policy.fallback_tool else None
        if fallback is not None and fallback.enabled and (agent is None or exclusion_reason(agent, fallback) is None):
            fb_latency: list[float] = []
            try:
                output = self._call(fallback.endpoint, inputs, fb_latency)
            except ToolInvocationError as exc:
                error += f"; fallback {fallback.tool_id} failed: {exc}"
            else:
                verdict = output_verdict(output, [tool, fallback], rules)
                if not verdict.ok:
                    return StepResult(tool.tool_id, "output_rejected", attempts, latencies,
                                      error="fallback output failed validation",
                                      fallback_tool=fallback.tool_id, verdict=verdict)
                return StepResult(tool.tool_id, "fallback_used", attempts, latencies, output=output,
                                  error=error, fallback_tool=fallback.tool_id, verdict=verdict)

        if policy.has_default:
            output = copy.deepcopy(policy.default_response)
            verdict = output_verdict(output, [tool], rules)
            if not verdict.ok:
                return StepResult(tool.tool_id, "output_rejected", attempts, latencies,
                                  error="default response failed validation", verdict=verdict)
            return StepResult(tool.tool_id, "defaulted", attempts, latencies, output=output,
                              error=error, verdict=verdict)

        status = "timed_out" if isinstance(last_error, ToolTimeout) else "failed"
        return StepResult(tool.tool_id, status, attempts, latencies, error=error)

    def execute_plan(
        self,
        decision: RoutingDecision,
        args: Mapping[str, Any],
        view: RegistryView,
        rules: Optional[Sequence[ValidationRule]] = None,
        agent: Optional[AgentDescriptor] = None,
    ) -> tuple[list[StepResult], Any]:
        """Run the plan in order and return (step results, final payload).

        Each step receives the agent's args plus ``deps``, mapping every tool it
        depends on to that tool's output. Raises AbortedAtStep at the first step
        that neither succeeded nor recovered.
        """
        rules = view.rule_list() if rules is None else rules
        outputs: dict[str, Any] = {}
        results: list[StepResult] = []
        for step in decision.plan:
            tool = view.tools[step.tool_id]
            inputs = dict(copy.deepcopy(dict(args)))
            inputs["deps"] = {dep: copy.deepcopy(outputs[dep]) for dep in step.inputs_from}
            result = self.execute_step(step, inputs, tool, rules, view.tools, agent)
            results.append(result)
            if result.status not in CONTINUE_STATUSES:
                raise AbortedAtStep(step.step_index, results)
            outputs[step.tool_id] = result.output
        if not results:
            raise AbortedAtStep(0, results)
        return results, results[-1].output
