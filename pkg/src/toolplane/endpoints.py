"""How a tool is reached: builtin callables, HTTP, or a subprocess.

HTTP tools receive the payload as a JSON request body (POST) and answer with
a JSON body. Subprocess tools read one JSON document on stdin and write one on
stdout, exiting 0 on success.
"""

from __future__ import annotations

import copy
import json
import subprocess
from dataclasses import dataclass, field
from typing import Any, Optional

import httpx

from toolplane.errors import InvalidRequest, MalformedToolOutput, ToolTimeout, TransportFailure

BUILTINS = ("echo", "const", "fail")
DEFAULT_TIMEOUT_MS = 5000


@dataclass
class EndpointSpec:
    kind: str
    builtin_name: Optional[str] = None
    payload: Any = None  # const builtin
    code: Optional[str] = None  # fail builtin
    url: Optional[str] = None
    method: str = "POST"
    argv: list[str] = field(default_factory=list)
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self) -> None:
        if not isinstance(self.timeout_ms, int) or isinstance(self.timeout_ms, bool) or self.timeout_ms <= 0:
            raise InvalidRequest("endpoint timeout_ms must be a positive integer")
        if self.kind == "builtin":
            if self.builtin_name not in BUILTINS:
                raise InvalidRequest(f"builtin_name must be one of {BUILTINS}")
        elif self.kind == "http":
            if not isinstance(self.url, str) or not self.url.startswith(("http://", "https://")):
                raise InvalidRequest("http endpoint needs an http(s) url")
            if self.method != "POST":
                raise InvalidRequest("http endpoints only support POST")
        elif self.kind == "subprocess":
            if not self.argv or not all(isinstance(a, str) for a in self.argv):
                raise InvalidRequest("subprocess endpoint needs a nonempty argv of strings")
        else:
            raise InvalidRequest(f"unknown endpoint kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: Any) -> "EndpointSpec":
        if not isinstance(data, dict):
            raise InvalidRequest("endpoint must be an object")
        kind = data.get("kind")
        allowed = {
            "builtin": {"kind", "builtin_name", "payload", "code", "timeout_ms"},
            "http": {"kind", "url", "method", "timeout_ms"},
            "subprocess": {"kind", "argv", "timeout_ms"},
        }.get(kind)
        if allowed is None:
            raise InvalidRequest(f"unknown endpoint kind {kind!r}")
        unknown = set(data) - allowed
        if unknown:
            raise InvalidRequest(f"{kind} endpoint has unknown keys {sorted(unknown)}")
        argv = data.get("argv", [])
        if not isinstance(argv, list):
            raise InvalidRequest("argv must be a list")
        return cls(
            kind=kind,
            builtin_name=data.get("builtin_name"),
            payload=copy.deepcopy(data.get("payload")),
            code=data.get("code"),
            url=data.get("url"),
            method=data.get("method", "POST"),
            argv=list(argv),
            timeout_ms=data.get("timeout_ms", DEFAULT_TIMEOUT_MS),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "builtin":
            out["builtin_name"] = self.builtin_name
            if self.builtin_name == "const":
                out["payload"] = copy.deepcopy(self.payload)
            if self.builtin_name == "fail" and self.code is not None:
                out["code"] = self.code
        elif self.kind == "http":
            out.update(url=self.url, method=self.method)
        else:
            out["argv"] = list(self.argv)
        out["timeout_ms"] = self.timeout_ms
        return out


@dataclass
class FallbackPolicy:
    max_retries: int = 0
    retry_backoff_ms: int = 0
    fallback_tool: Optional[str] = None
    default_response: Any = None
    has_default: bool = False

    def __post_init__(self) -> None:
        for name in ("max_retries", "retry_backoff_ms"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise InvalidRequest(f"fallback {name} must be a nonnegative integer")
        if self.fallback_tool is not None and not isinstance(self.fallback_tool, str):
            raise InvalidRequest("fallback_tool must be a tool id")
        if self.default_response is not None:
            self.has_default = True

    @classmethod
    def from_dict(cls, data: Any) -> "FallbackPolicy":
        if not isinstance(data, dict):
            raise InvalidRequest("fallback must be an object")
        unknown = set(data) - {"max_retries", "retry_backoff_ms", "fallback_tool", "default_response"}
        if unknown:
            raise InvalidRequest(f"fallback has unknown keys {sorted(unknown)}")
        return cls(
            max_retries=data.get("max_retries", 0),
            retry_backoff_ms=data.get("retry_backoff_ms", 0),
            fallback_tool=data.get("fallback_tool"),
            default_response=copy.deepcopy(data.get("default_response")),
            # an explicit JSON null is still a configured default
            has_default="default_response" in data,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"max_retries": self.max_retries, "retry_backoff_ms": self.retry_backoff_ms}
        if self.fallback_tool is not None:
            out["fallback_tool"] = self.fallback_tool
        if self.has_default:
            out["default_response"] = copy.deepcopy(self.default_response)
        return out


def invoke_builtin(endpoint: EndpointSpec, payload: Any) -> Any:
    if endpoint.builtin_name == "echo":
        return copy.deepcopy(payload)
    if endpoint.builtin_name == "const":
        return copy.deepcopy(endpoint.payload)
    raise TransportFailure(f"builtin fail: {endpoint.code or 'failed'}")


def _parse(text: str | bytes, source: str) -> Any:
    try:
        return json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedToolOutput(f"{source} is not a JSON document: {exc}") from exc


def invoke_http(endpoint: EndpointSpec, payload: Any) -> Any:
    timeout = endpoint.timeout_ms / 1000
    try:
        response = httpx.post(
            endpoint.url,
            content=json.dumps(payload).encode("utf-8"),
            headers={"content-type": "application/json"},
            timeout=timeout,
        )
    except httpx.TimeoutException as exc:
        raise ToolTimeout(f"no response from {endpoint.url} within {endpoint.timeout_ms} ms") from exc
    except httpx.HTTPError as exc:
        raise TransportFailure(f"{endpoint.url}: {exc}") from exc
    if not 200 <= response.status_code < 300:
        raise TransportFailure(f"{endpoint.url} answered HTTP {response.status_code}")
    return _parse(response.content, "response body")


def invoke_subprocess(endpoint: EndpointSpec, payload: Any) -> Any:
    try:
        proc = subprocess.run(
            endpoint.argv,
            input=json.dumps(payload),
            capture_output=True,
            text=True,
            timeout=endpoint.timeout_ms / 1000,
        )
    except subprocess.TimeoutExpired as exc:
        raise ToolTimeout(f"{endpoint.argv[0]} exceeded {endpoint.timeout_ms} ms") from exc
    except OSError as exc:
        raise TransportFailure(f"cannot run {endpoint.argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.strip()[-200:]
        raise TransportFailure(f"{endpoint.argv[0]} exited {proc.returncode}: {tail}")
    return _parse(proc.stdout, "stdout")


INVOKERS = {"builtin": invoke_builtin, "http": invoke_http, "subprocess": invoke_subprocess}


def invoke(endpoint: EndpointSpec, payload: Any) -> Any:
    return INVOKERS[endpoint.kind](endpoint, payload)
