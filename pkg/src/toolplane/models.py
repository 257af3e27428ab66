"""Pydantic models for the HTTP wire format."""

from __future__ import annotations

import json
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, StrictStr, field_validator


class InvocationRequest(BaseModel):
    """The single-tool envelope every agent sends."""

    model_config = ConfigDict(extra="forbid")

    request_id: Optional[StrictStr] = Field(default=None, min_length=1)
    agent_id: StrictStr = Field(min_length=1)
    intent: StrictStr
    args: dict[str, Any] = Field(default_factory=dict)
    context: dict[str, Any] = Field(default_factory=dict)

    @field_validator("intent")
    @classmethod
    def _intent_nonempty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("intent must be nonempty")
        return value

    @field_validator("args")
    @classmethod
    def _no_reserved_key(cls, value: dict[str, Any]) -> dict[str, Any]:
        if "deps" in value:
            raise ValueError("'deps' is reserved for dependency outputs")
        return value


class ErrorBody(BaseModel):
    code: str
    message: str


class InvocationResponse(BaseModel):
    request_id: str
    status: Literal["ok", "error"]
    output: Any = None
    error: Optional[ErrorBody] = None
    selected_tool: Optional[str] = None
    audit_seq: int = 0

    def wire(self) -> dict[str, Any]:
        # output may legitimately be JSON null, so presence is tracked by "set", not by value
        return self.model_dump(exclude_unset=True, mode="json")


class FeedbackRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    request_id: StrictStr = Field(min_length=1)
    rating: Any
    comment: Optional[StrictStr] = None


MANIFEST_INPUT_SCHEMA = {
    "kind": "object",
    "properties": {
        "request_id": {"kind": "string"},
        "agent_id": {"kind": "string"},
        "intent": {"kind": "string"},
        "args": {"kind": "object"},
        "context": {"kind": "object"},
    },
    "required": ["agent_id", "intent"],
}


class ToolManifest(BaseModel):
    name: Literal["control_plane"] = "control_plane"
    description: str = (
        "Single entry point to every registered tool. Describe what you need in "
        "'intent' and pass tool arguments in 'args'; the control plane selects, "
        "validates, runs and logs the right tool (and anything it depends on) "
        "and returns its output."
    )
    input_schema: dict[str, Any] = Field(default_factory=lambda: json.loads(json.dumps(MANIFEST_INPUT_SCHEMA)))


MANIFEST_BYTES = json.dumps(ToolManifest().model_dump(), sort_keys=True, separators=(",", ":")).encode("utf-8")
