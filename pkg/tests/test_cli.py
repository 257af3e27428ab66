import json
import os
import subprocess
import sys
import time

import httpx
import pytest
from click.testing import CliRunner

from conftest import tool
from toolplane import cli


class Borrowed:
    """Lends the fixture's TestClient to one CLI call without closing it."""

    def __init__(self, client):
        self.client = client

    def __enter__(self):
        return self.client

    def __exit__(self, *exc):
        return None


@pytest.fixture
def run(client, monkeypatch):
    monkeypatch.setattr(cli, "make_client", lambda server: Borrowed(client))
    runner = CliRunner()

    def invoke(*args, input=None):
        return runner.invoke(cli.main, list(args), input=input)

    return invoke


def test_register_and_invoke(run, tmp_path):
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(tool("echo", description="echo text")))
    assert run("register-tool", str(path)).exit_code == 0
    assert run("register-agent", "--id", "bot").exit_code == 0
    result = run("invoke", "--agent", "bot", "--intent", "echo this", "--args", '{"m": "hi"}')
    assert result.exit_code == 0, result.output
    body = json.loads(result.stdout)
    assert body["output"]["m"] == "hi"
    fb = run("feedback", body["request_id"], "--rating", "1")
    assert fb.exit_code == 0 and abs(json.loads(fb.stdout)["weight"] - 0.6) <= 1e-9
    assert json.loads(run("tools").stdout)[0]["tool_id"] == "echo"
    assert json.loads(run("usage", "--tool", "echo").stdout)["tools"]["echo"]["count"] == 1
    explained = run("explain", body["request_id"])
    assert explained.exit_code == 0 and "selected echo" in explained.stdout


def test_stdin_descriptor(run):
    result = run("register-tool", "-", input=json.dumps(tool("echo")))
    assert result.exit_code == 0 and json.loads(result.stdout)["tool_id"] == "echo"


def test_domain_error_exits_1(run):
    result = run("invoke", "--agent", "ghost", "--intent", "anything")
    assert result.exit_code == 1
    assert json.loads(result.stdout)["error"]["code"] == "unknown_agent"


def test_usage_errors_exit_2(run, tmp_path):
    assert run("invoke", "--agent", "bot").exit_code == 2
    assert run("invoke", "--agent", "bot", "--intent", "x", "--args", "{bad").exit_code == 2
    assert run("register-tool", str(tmp_path / "missing.json")).exit_code == 2
    assert run("register-agent").exit_code == 2


def test_unreachable_server_exits_1():
    result = CliRunner().invoke(cli.main, ["--server", "127.0.0.1:9", "tools"])
    assert result.exit_code == 1
    assert "cannot reach" in result.output


def test_serve_prints_bound_address(tmp_path):
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    proc = subprocess.Popen(
        [sys.executable, "-m", "toolplane.cli", "serve", "--addr", "127.0.0.1:0", "--data-dir", str(tmp_path)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
    )
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("listening on http://127.0.0.1:")
        url = line.split()[-1]
        deadline = time.monotonic() + 10
        while True:
            try:
                manifest = httpx.get(url + "/v1/manifest", timeout=2)
                break
            except httpx.HTTPError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        assert manifest.json()["name"] == "control_plane"
    finally:
        proc.terminate()
        proc.wait(timeout=10)
