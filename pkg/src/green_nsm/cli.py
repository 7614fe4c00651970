"""Operator entry points: scenario runner, report/plot emitter, log replay,
and the HQ control client (a thin HTTP client of the hub service)."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import httpx

from . import simulator
from .protocol import HqAction, HqCommand, frame
from .scenario import Scenario, ScenarioError
from .types import SensorRole

EXIT_OK = 0
EXIT_MISSING_FILE = 1
EXIT_SCENARIO_INVALID = 2
EXIT_CONNECTION = 3
EXIT_HUB_ERROR = 4

_ROLE_NAMES = {
    "collection": SensorRole.COLLECTION_ONLY,
    "half": SensorRole.HALF_CYCLE,
    "full": SensorRole.FULL_CYCLE,
}


def _setup_logging():
    level = os.environ.get("GREEN_NSM_LOG_LEVEL", "info").lower()
    logging.basicConfig(level={"error": logging.ERROR, "info": logging.INFO,
                               "debug": logging.DEBUG}.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main():
    """Fleet orchestration tooling: simulate, report, replay, and command the hub."""
    _setup_logging()


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=str)
@click.option("--seed", type=int, default=None, help="override the scenario seed")
@click.option("--out", "out_dir", required=True, type=str)
def run(scenario_path: str, seed: int | None, out_dir: str):
    """Run a scenario; write event log, report, summary, and plots to OUT."""
    path = Path(scenario_path)
    if not path.exists():
        click.echo(f"scenario file not found: {path}", err=True)
        sys.exit(EXIT_MISSING_FILE)
    try:
        scenario = Scenario.from_file(path)
        if seed is not None:
            scenario.seed = seed
        scenario.validate()
        log, report = simulator.run(scenario)
    except ScenarioError as e:
        click.echo(f"invalid scenario: {e}", err=True)
        sys.exit(EXIT_SCENARIO_INVALID)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.ndjson").write_bytes(b"".join(log))
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(report.summary_text())
    from .plots import write_plots
    write_plots(log, out)
    click.echo(report.summary_text())
    click.echo(f"log sha256: {simulator.log_sha256(log)}")


@main.command()
@click.option("--log", "log_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
def report(log_path: str, out_dir: str):
    """Rebuild report, summary, and plots from an existing event log."""
    path = Path(log_path)
    if not path.exists():
        click.echo(f"log file not found: {path}", err=True)
        sys.exit(EXIT_MISSING_FILE)
    lines = _read_log(path)
    try:
        rep = simulator.replay(lines)
    except simulator.ReplayError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_MISSING_FILE)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(rep.summary_text())
    from .plots import write_plots
    write_plots(lines, out)
    click.echo(rep.summary_text())


@main.command()
@click.option("--log", "log_path", required=True, type=str)
def replay(log_path: str):
    """Recompute a report purely from an event log and print it."""
    path = Path(log_path)
    if not path.exists():
        click.echo(f"log file not found: {path}", err=True)
        sys.exit(EXIT_MISSING_FILE)
    try:
        rep = simulator.replay(_read_log(path))
    except simulator.ReplayError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_MISSING_FILE)
    click.echo(json.dumps(rep.to_dict(), indent=2, sort_keys=True))


def _read_log(path: Path) -> list[bytes]:
    data = path.read_bytes()
    if not data:
        return []
    lines = data.split(b"\n")
    tail = lines.pop()
    out = [l + b"\n" for l in lines]
    if tail:
        out.append(tail)  # missing newline: replay reports the truncated line
    return out


@main.command()
@click.option("--addr", required=True, help="hub service HOST:PORT")
@click.argument("command")
@click.argument("args", nargs=-1)
def hq(addr: str, command: str, args: tuple[str, ...]):
    """Send an operator command to a live hub.

    Commands: query-state | escalate ID | power-save ID |
    set-role ID {collection,half,full} | relocate-storage ID TARGET
    """
    try:
        cmd = _build_command(command, args)
    except ValueError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_HUB_ERROR)
    try:
        resp = httpx.post(f"http://{addr}/v1/hq", content=frame(cmd),
                          timeout=10.0)
    except httpx.TransportError as e:
        click.echo(f"cannot reach hub at {addr}: {e}", err=True)
        sys.exit(EXIT_CONNECTION)
    if resp.status_code >= 400:
        detail = resp.json().get("detail", resp.text)
        click.echo(f"hub error: {detail}", err=True)
        sys.exit(EXIT_HUB_ERROR)
    payload = resp.json()
    if cmd.action is HqAction.QUERY_STATE:
        click.echo(payload["system_string"])
        for nid, entry in payload["nodes"].items():
            click.echo(f"  {nid}: role={entry['role']} mode={entry['mode']} "
                       f"state={entry['sensor_state']} "
                       f"storage={entry['storage_fraction']:.2f}")
    else:
        click.echo(f"ack: {payload['target']}")


def _build_command(command: str, args: tuple[str, ...]) -> HqCommand:
    if command == "query-state":
        return HqCommand(action=HqAction.QUERY_STATE)
    if command in ("escalate", "power-save"):
        if len(args) != 1:
            raise ValueError(f"{command} takes exactly one sensor id")
        action = HqAction.ESCALATE if command == "escalate" else HqAction.POWER_SAVE
        return HqCommand(action=action, target=args[0])
    if command == "set-role":
        if len(args) != 2 or args[1] not in _ROLE_NAMES:
            raise ValueError("usage: set-role ID {collection,half,full}")
        return HqCommand(action=HqAction.SET_ROLE, target=args[0],
                         role=_ROLE_NAMES[args[1]])
    if command == "relocate-storage":
        if len(args) != 2:
            raise ValueError("usage: relocate-storage ID TARGET")
        return HqCommand(action=HqAction.RELOCATE_STORAGE, target=args[0],
                         relocate_to=args[1])
    raise ValueError(f"unknown hq command {command!r}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8470, type=int)
def serve(host: str, port: int):
    """Start the hub service."""
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
