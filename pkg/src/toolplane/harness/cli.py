"""``toolplane-harness run <scenario.json>``."""

from __future__ import annotations

import json
import sys
import tempfile
import warnings
from typing import Optional

import click
import httpx

from toolplane.harness.scenario import HarnessFailure, ScenarioSpec, run_scenario


@click.group()
def main() -> None:
    """Scenario harness for the control plane."""


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--server", help="Run against this server instead of a fresh in-process one.")
def run(scenario: str, server: Optional[str]) -> None:
    """Run a scenario file and print its report; exit 1 if anything failed."""
    try:
        spec = ScenarioSpec.load(scenario)
    except (OSError, ValueError, TypeError) as exc:
        raise click.UsageError(f"cannot load scenario {scenario}: {exc}") from None
    try:
        if server:
            url = server if server.startswith("http") else f"http://{server}"
            with httpx.Client(base_url=url, timeout=60.0) as client:
                report = run_scenario(spec, client)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # starlette nags about its httpx backend
                from fastapi.testclient import TestClient

            from toolplane.api import create_app
            from toolplane.config import Config
            from toolplane.service import ControlPlane

            with tempfile.TemporaryDirectory() as data_dir:
                plane = ControlPlane(data_dir, Config(fsync=False))
                try:
                    with TestClient(create_app(plane)) as client:
                        report = run_scenario(spec, client)
                finally:
                    plane.close()
    except HarnessFailure as exc:
        click.echo(f"harness failure: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":  # pragma: no cover
    main()
