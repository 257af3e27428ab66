"""HTTP face of the control plane.

Domain failures come back as HTTP 200 with ``{"status": "error", "error":
{"code", "message"}}``; only malformed envelopes (400) and server faults (500)
use transport-level status codes.
"""

from __future__ import annotations

import json
from typing import Any, Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from starlette.concurrency import run_in_threadpool

from toolplane.errors import InvalidRequest, ToolplaneError
from toolplane.service import ControlPlane, http_status


def _error(exc: ToolplaneError) -> JSONResponse:
    body = {"status": "error", "error": {"code": exc.code, "message": exc.message}}
    return JSONResponse(body, status_code=http_status(exc.code))


async def _json_body(request: Request) -> Any:
    raw = await request.body()
    try:
        return json.loads(raw)
    except (ValueError, UnicodeDecodeError):
        raise InvalidRequest("request body is not a JSON document") from None


async def _call(fn: Callable[..., Any], *args: Any, mutation: bool = False) -> JSONResponse:
    try:
        result = await run_in_threadpool(fn, *args)
    except ToolplaneError as exc:
        return _error(exc)
    if mutation:
        result = {"status": "ok", **result}
    return JSONResponse(result)


def _seq_range(seq_from: Optional[int], seq_to: Optional[int]) -> Optional[tuple[int, int]]:
    if seq_from is None and seq_to is None:
        return None
    return (seq_from if seq_from is not None else 1, seq_to if seq_to is not None else 2**63)


def create_app(plane: Optional[ControlPlane] = None) -> FastAPI:
    plane = plane if plane is not None else ControlPlane.from_env()
    app = FastAPI(title="toolplane", summary="Control plane exposed to agents as a single tool")
    app.state.plane = plane

    @app.post("/v1/invoke")
    async def invoke(request: Request) -> JSONResponse:
        body = await request.body()
        response = await run_in_threadpool(plane.handle_invoke_bytes, body)
        code = response.error.code if response.error else None
        return JSONResponse(response.wire(), status_code=http_status(code))

    def registration(fn: Callable[[Any], dict[str, Any]]):
        async def endpoint(request: Request) -> JSONResponse:
            try:
                data = await _json_body(request)
            except ToolplaneError as exc:
                return _error(exc)
            return await _call(fn, data, mutation=True)

        return endpoint

    app.post("/v1/register/tool")(registration(plane.register_tool))
    app.post("/v1/register/agent")(registration(plane.register_agent))
    app.post("/v1/register/rule")(registration(plane.register_rule))
    app.post("/v1/register/metric")(registration(plane.register_metric))
    app.post("/v1/feedback")(registration(plane.feedback))

    @app.put("/v1/tools/{tool_id}")
    async def update_tool(tool_id: str, request: Request) -> JSONResponse:
        try:
            data = await _json_body(request)
        except ToolplaneError as exc:
            return _error(exc)
        return await _call(plane.update_tool, tool_id, data, mutation=True)

    @app.delete("/v1/tools/{tool_id}")
    async def deregister_tool(tool_id: str) -> JSONResponse:
        return await _call(plane.deregister_tool, tool_id, mutation=True)

    @app.get("/v1/tools/{tool_id}")
    async def get_tool(tool_id: str) -> JSONResponse:
        return await _call(plane.get_tool, tool_id)

    @app.get("/v1/tools")
    async def list_tools(tag: Optional[str] = None) -> JSONResponse:
        return await _call(plane.list_tools, tag)

    @app.get("/v1/agents")
    async def list_agents() -> JSONResponse:
        return await _call(plane.list_agents)

    @app.get("/v1/rules")
    async def list_rules() -> JSONResponse:
        return await _call(plane.list_rules)

    @app.get("/v1/usage")
    async def usage(
        agent_id: Optional[str] = None,
        tool_id: Optional[str] = None,
        outcome: Optional[str] = None,
        seq_from: Optional[int] = None,
        seq_to: Optional[int] = None,
    ) -> JSONResponse:
        return await _call(plane.usage, agent_id, tool_id, outcome, _seq_range(seq_from, seq_to))

    @app.get("/v1/audit")
    async def audit(
        agent_id: Optional[str] = None,
        tool_id: Optional[str] = None,
        outcome: Optional[str] = None,
        seq_from: Optional[int] = None,
        seq_to: Optional[int] = None,
    ) -> JSONResponse:
        return await _call(plane.audit, agent_id, tool_id, outcome, _seq_range(seq_from, seq_to))

    @app.get("/v1/explain/{request_id}")
    async def explain(request_id: str) -> Response:
        try:
            text = await run_in_threadpool(plane.explain, request_id)
        except ToolplaneError as exc:
            return _error(exc)
        return PlainTextResponse(text)

    @app.get("/v1/manifest")
    async def manifest() -> Response:
        return Response(plane.manifest(), media_type="application/json")

    return app
