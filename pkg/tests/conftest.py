from __future__ import annotations

import socket
import sys
import threading
import time
from pathlib import Path
from typing import Any

import pytest
import uvicorn
from fastapi.testclient import TestClient

sys.path.insert(0, str(Path(__file__).parent))

from toolplane.api import create_app  # noqa: E402
from toolplane.config import Config  # noqa: E402
from toolplane.service import ControlPlane  # noqa: E402


def tool(tool_id: str, **extra: Any) -> dict[str, Any]:
    """A tool descriptor dict on the builtin echo endpoint unless overridden."""
    out = {"tool_id": tool_id, "endpoint": {"kind": "builtin", "builtin_name": "echo"}}
    out.update(extra)
    return out


@pytest.fixture
def plane(tmp_path):
    cp = ControlPlane(tmp_path, Config(fsync=False))
    yield cp
    cp.close()


@pytest.fixture
def client(plane):
    with TestClient(create_app(plane)) as c:
        yield c


class LiveServer:
    """uvicorn on an ephemeral port in a background thread."""

    def __init__(self, plane: ControlPlane) -> None:
        self.plane = plane
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.url = "http://127.0.0.1:%d" % self.sock.getsockname()[1]
        config = uvicorn.Config(create_app(plane), log_level="warning", limit_concurrency=1000)
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, kwargs={"sockets": [self.sock]}, daemon=True)

    def __enter__(self) -> "LiveServer":
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc: Any) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)
        self.sock.close()


@pytest.fixture
def live_server(plane):
    with LiveServer(plane) as server:
        yield server
