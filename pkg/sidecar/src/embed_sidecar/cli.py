"""Command-line entry points: the serving loop and the selfcheck report."""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from .config import SidecarConfig
from .selfcheck import run_selfcheck
from .server import serve as run_server


def _load_config(config_path: str | None, transport: str | None, socket_path: str | None) -> SidecarConfig:
    try:
        config = SidecarConfig.from_file(config_path) if config_path else SidecarConfig()
        overrides = {}
        if transport:
            overrides["transport"] = transport
        if socket_path:
            overrides["socket_path"] = socket_path
        if overrides:
            config = dataclasses.replace(config, **overrides)
        return config
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"bad config: {exc}")


@click.group()
@click.option("--verbose", "-v", is_flag=True)
def main(verbose):
    """Frame-embedding sidecar speaking newline-delimited JSON."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--transport", type=click.Choice(["stdio", "socket"]), default=None)
@click.option("--socket-path", type=click.Path(), default=None)
def serve(config_path, transport, socket_path):
    """Answer embed requests until the input stream closes."""
    run_server(_load_config(config_path, transport, socket_path))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False), default=None, help="Alternate fixture directory.")
@click.option("--json", "as_json", is_flag=True, help="Emit the raw report document.")
def selfcheck(config_path, fixtures, as_json):
    """Exercise all three modes and replay the golden transcript."""
    config = _load_config(config_path, None, None)
    report = run_selfcheck(config, fixtures=Path(fixtures) if fixtures else None)
    if as_json:
        click.echo(json.dumps(report, indent=2, sort_keys=True))
    else:
        click.echo(f"model: {report['handshake']['model']}  dim: {report['handshake']['dim']}")
        for check in report["checks"]:
            status = "ok " if check["ok"] else "FAIL"
            extra = ""
            if "latency_ms" in check:
                extra = f"  ({check['latency_ms']} ms)"
            if not check["ok"]:
                extra += "  " + "; ".join(check.get("problems", []) or [check.get("error", "")])
            click.echo(f"[{status}] {check['check']}{extra}")
    if not report["ok"]:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
