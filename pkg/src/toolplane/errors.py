"""Typed errors shared across the control plane.

Every domain error carries a stable ``code`` that the gateway copies verbatim
into error responses, so agents can branch on it.
"""

from __future__ import annotations


class ToolplaneError(Exception):
    code = "internal"

    def __init__(self, message: str = "") -> None:
        super().__init__(message or self.code)
        self.message = message or self.code


class InvalidRequest(ToolplaneError):
    code = "invalid_request"


class DuplicateId(ToolplaneError):
    code = "duplicate_id"


class NotFound(ToolplaneError):
    code = "not_found"


class UnknownDependency(ToolplaneError):
    code = "unknown_dependency"


class DependencyCycle(ToolplaneError):
    code = "dependency_cycle"


class HasDependents(ToolplaneError):
    code = "has_dependents"


class MalformedSchema(ToolplaneError):
    code = "malformed_schema"


class MalformedRule(ToolplaneError):
    code = "malformed_rule"


class IoFailure(ToolplaneError):
    code = "io_failure"


class CorruptSnapshot(ToolplaneError):
    code = "corrupt_snapshot"


class UnknownAgent(ToolplaneError):
    code = "unknown_agent"


class NoMatchingTool(ToolplaneError):
    code = "no_matching_tool"


class InputRejected(ToolplaneError):
    code = "input_rejected"


class OutputRejected(ToolplaneError):
    code = "output_rejected"


class UnknownRequest(ToolplaneError):
    code = "unknown_request"


class RatingOutOfRange(ToolplaneError):
    code = "rating_out_of_range"


class ConfigError(ToolplaneError):
    code = "config_error"


class AbortedAtStep(ToolplaneError):
    """Plan execution stopped at ``index``; ``results`` holds every step run so far."""

    code = "execution_failed"

    def __init__(self, index: int, results: list) -> None:
        last = results[-1] if results else None
        detail = f" ({last.tool_id}: {last.status})" if last is not None else ""
        super().__init__(f"plan aborted at step {index}{detail}")
        self.index = index
        self.results = results


# Raised by endpoint invokers; the executor turns these into StepResult statuses.
class ToolInvocationError(Exception):
    pass


class TransportFailure(ToolInvocationError):
    pass


class ToolTimeout(ToolInvocationError):
    pass


class MalformedToolOutput(ToolInvocationError):
    pass
