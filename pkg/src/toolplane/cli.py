"""``toolplane`` command line: ``serve`` plus a thin client for the HTTP API.

Client subcommands print the server's JSON answer on stdout. Exit codes: 0 on
success, 1 on a domain error or unreachable server, 2 on a usage error.
"""

from __future__ import annotations

import json
import os
import socket
import sys
from pathlib import Path
from typing import Any, Optional

import click
import httpx

DEFAULT_ADDR = "127.0.0.1:8700"


def base_url(addr: str) -> str:
    return addr if addr.startswith(("http://", "https://")) else f"http://{addr}"


def make_client(server: str) -> httpx.Client:
    return httpx.Client(base_url=base_url(server), timeout=60.0)


def _load_json(source: str, what: str) -> Any:
    try:
        text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
        return json.loads(text)
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read {what} from {source}: {exc}") from None


def _json_option(value: Optional[str], name: str) -> Any:
    if value is None:
        return None
    try:
        return json.loads(value)
    except ValueError as exc:
        raise click.BadParameter(f"not valid JSON: {exc}", param_hint=name) from None


def _emit(ctx: click.Context, method: str, path: str, **kwargs: Any) -> None:
    """Send one request, print the JSON body, and exit 1 if it reports an error."""
    try:
        with make_client(ctx.obj["server"]) as client:
            response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach control plane at {ctx.obj['server']}: {exc}", err=True)
        ctx.exit(1)
    try:
        body = response.json()
    except ValueError:
        click.echo(response.text, nl=False)
        ctx.exit(0 if response.is_success else 1)
    click.echo(json.dumps(body, indent=2, sort_keys=True))
    if isinstance(body, dict) and body.get("status") == "error":
        error = body.get("error") or {}
        click.echo(f"error: {error.get('code', 'unknown')}: {error.get('message', '')}", err=True)
        ctx.exit(1)
    if not response.is_success:
        click.echo(f"error: HTTP {response.status_code}", err=True)
        ctx.exit(1)


@click.group()
@click.option(
    "--server",
    envvar="TOOLPLANE_ADDR",
    default=DEFAULT_ADDR,
    show_default=True,
    help="Control plane address (host:port or URL).",
)
@click.pass_context
def main(ctx: click.Context, server: str) -> None:
    """Control plane for agent tool orchestration."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--addr", envvar="TOOLPLANE_ADDR", default=DEFAULT_ADDR, show_default=True,
              help="host:port to bind; port 0 picks a free port.")
@click.option("--data-dir", envvar="TOOLPLANE_DATA_DIR", type=click.Path(file_okay=False),
              help="Directory for the registry snapshot and audit log.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, exists=True),
              help="JSON configuration file.")
def serve(addr: str, data_dir: Optional[str], config_path: Optional[str]) -> None:
    """Run the control plane HTTP service until interrupted."""
    import uvicorn

    from toolplane.api import create_app
    from toolplane.config import Config
    from toolplane.errors import ToolplaneError
    from toolplane.service import ControlPlane

    host, _, port = base_url(addr).split("://", 1)[1].rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected host:port, got {addr!r}", param_hint="--addr")
    try:
        plane = ControlPlane(data_dir, Config.load(config_path))
    except ToolplaneError as exc:
        click.echo(f"error: {exc.code}: {exc.message}", err=True)
        sys.exit(1)
    sock = socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, int(port)))
    bound_host, bound_port = sock.getsockname()[:2]
    click.echo(f"listening on http://{bound_host}:{bound_port}")
    sys.stdout.flush()
    server = uvicorn.Server(uvicorn.Config(create_app(plane), log_level="warning"))
    try:
        server.run(sockets=[sock])
    finally:
        plane.close()


@main.command("register-tool")
@click.argument("descriptor")
@click.pass_context
def register_tool(ctx: click.Context, descriptor: str) -> None:
    """Register a tool from a JSON descriptor file ('-' for stdin)."""
    _emit(ctx, "POST", "/v1/register/tool", json=_load_json(descriptor, "tool descriptor"))


@main.command("register-agent")
@click.argument("descriptor", required=False)
@click.option("--id", "agent_id", help="Agent id (instead of a descriptor file).")
@click.option("--display-name")
@click.option("--allowed-tag", multiple=True, help="Restrict the agent to tools with this tag.")
@click.option("--deny-tool", multiple=True, help="Never route this agent to this tool.")
@click.pass_context
def register_agent(ctx: click.Context, descriptor: Optional[str], agent_id: Optional[str],
                   display_name: Optional[str], allowed_tag: tuple[str, ...], deny_tool: tuple[str, ...]) -> None:
    """Register an agent from a descriptor file or from options."""
    if descriptor is not None:
        payload = _load_json(descriptor, "agent descriptor")
    elif agent_id:
        payload = {"agent_id": agent_id, "allowed_tags": list(allowed_tag), "denied_tools": list(deny_tool)}
        if display_name:
            payload["display_name"] = display_name
    else:
        raise click.UsageError("give a descriptor file or --id")
    _emit(ctx, "POST", "/v1/register/agent", json=payload)


@main.command("register-rule")
@click.argument("rule")
@click.pass_context
def register_rule(ctx: click.Context, rule: str) -> None:
    """Register a validation rule from a JSON file ('-' for stdin)."""
    _emit(ctx, "POST", "/v1/register/rule", json=_load_json(rule, "rule"))


@main.command()
@click.option("--agent", "agent_id", required=True)
@click.option("--intent", required=True)
@click.option("--args", "args_json", help="Tool arguments as a JSON object.")
@click.option("--context", "context_json", help="Context as a JSON object.")
@click.option("--request-id")
@click.pass_context
def invoke(ctx: click.Context, agent_id: str, intent: str, args_json: Optional[str],
           context_json: Optional[str], request_id: Optional[str]) -> None:
    """Send an intent to the control plane and print the tool output."""
    payload: dict[str, Any] = {"agent_id": agent_id, "intent": intent}
    args = _json_option(args_json, "--args")
    context = _json_option(context_json, "--context")
    if args is not None:
        payload["args"] = args
    if context is not None:
        payload["context"] = context
    if request_id:
        payload["request_id"] = request_id
    _emit(ctx, "POST", "/v1/invoke", json=payload)


@main.command()
@click.argument("request_id")
@click.option("--rating", type=float, required=True, help="Rating in [0, 1].")
@click.option("--comment")
@click.pass_context
def feedback(ctx: click.Context, request_id: str, rating: float, comment: Optional[str]) -> None:
    """Rate the outcome of an earlier request."""
    payload: dict[str, Any] = {"request_id": request_id, "rating": rating}
    if comment:
        payload["comment"] = comment
    _emit(ctx, "POST", "/v1/feedback", json=payload)


@main.command()
@click.option("--tool", "tool_id")
@click.option("--agent", "agent_id")
@click.option("--outcome")
@click.pass_context
def usage(ctx: click.Context, tool_id: Optional[str], agent_id: Optional[str], outcome: Optional[str]) -> None:
    """Show aggregated usage statistics."""
    params = {k: v for k, v in (("tool_id", tool_id), ("agent_id", agent_id), ("outcome", outcome)) if v}
    _emit(ctx, "GET", "/v1/usage", params=params)


@main.command()
@click.option("--tag", help="Only tools carrying this tag.")
@click.pass_context
def tools(ctx: click.Context, tag: Optional[str]) -> None:
    """List registered tools."""
    _emit(ctx, "GET", "/v1/tools", params={"tag": tag} if tag else {})


@main.command()
@click.argument("request_id")
@click.pass_context
def explain(ctx: click.Context, request_id: str) -> None:
    """Print the routing report for an earlier request."""
    _emit(ctx, "GET", f"/v1/explain/{request_id}")


if __name__ == "__main__":  # pragma: no cover
    main(prog_name=os.path.basename(sys.argv[0]))
