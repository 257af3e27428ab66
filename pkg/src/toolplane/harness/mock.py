"""Scripted in-process HTTP tools for exercising the real transport path."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional

_ECHO = object()


class _Handler(BaseHTTPRequestHandler):
    server: "_MockServer"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002 - stdlib signature
        pass

    def do_POST(self) -> None:  # noqa: N802 - stdlib naming
        tool = self.server.tool
        length = int(self.headers.get("content-length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw) if raw else None
        except ValueError:
            body = raw.decode("utf-8", "replace")
        call = tool._record(body)
        if tool.sleep_ms:
            time.sleep(tool.sleep_ms / 1000.0)
        if call <= tool.fail_times:
            self._send(tool.fail_status, {"error": f"scripted failure {call} of {tool.fail_times}"})
        else:
            self._send(200, body if tool.respond_with is _ECHO else tool.respond_with)

    def _send(self, status: int, payload: Any) -> None:
        data = json.dumps(payload).encode("utf-8")
        try:
            self.send_response(status)
            self.send_header("content-type", "application/json")
            self.send_header("content-length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass  # the caller timed out and hung up


class _MockServer(ThreadingHTTPServer):
    daemon_threads = True
    tool: "MockTool"


class MockTool:
    """An HTTP tool on an ephemeral localhost port with scripted behavior.

    ``respond_with`` fixes the response payload (default: echo the request
    body); the first ``fail_times`` calls answer HTTP ``fail_status``; every
    call first sleeps ``sleep_ms``. Request bodies are kept in ``requests``.
    """

    def __init__(self, respond_with: Any = _ECHO, fail_times: int = 0, sleep_ms: int = 0,
                 fail_status: int = 503) -> None:
        self.respond_with = respond_with
        self.fail_times = fail_times
        self.sleep_ms = sleep_ms
        self.fail_status = fail_status
        self.requests: list[Any] = []
        self._lock = threading.Lock()
        self._server: Optional[_MockServer] = None
        self._thread: Optional[threading.Thread] = None

    def _record(self, body: Any) -> int:
        with self._lock:
            self.requests.append(body)
            return len(self.requests)

    @property
    def calls(self) -> int:
        return len(self.requests)

    def start(self) -> "MockTool":
        self._server = _MockServer(("127.0.0.1", 0), _Handler)
        self._server.tool = self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    @property
    def url(self) -> str:
        assert self._server is not None, "mock tool is not running"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def endpoint(self, timeout_ms: int = 5000) -> dict[str, Any]:
        return {"kind": "http", "url": self.url, "method": "POST", "timeout_ms": timeout_ms}

    def __enter__(self) -> "MockTool":
        return self.start() if self._server is None else self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def mock_http_tool(respond_with: Any = _ECHO, fail_times: int = 0, sleep_ms: int = 0) -> MockTool:
    """Start a :class:`MockTool`; call ``stop()`` (or use it as a context manager) when done."""
    return MockTool(respond_with=respond_with, fail_times=fail_times, sleep_ms=sleep_ms).start()


def from_behavior(behavior: dict[str, Any]) -> MockTool:
    unknown = set(behavior) - {"respond_with", "fail_times", "sleep_ms", "fail_status"}
    if unknown:
        raise ValueError(f"unknown mock behavior keys {sorted(unknown)}")
    return MockTool(
        respond_with=behavior.get("respond_with", _ECHO),
        fail_times=int(behavior.get("fail_times", 0)),
        sleep_ms=int(behavior.get("sleep_ms", 0)),
        fail_status=int(behavior.get("fail_status", 503)),
    )
