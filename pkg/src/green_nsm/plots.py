"""Static SVG summaries of a run: fleet energy over time and the alert timeline."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .energy import ROLE_POWER_W
from .types import SensorRole


def write_plots(log_lines: list[bytes], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    events = []
    for raw in log_lines:
        envelope = json.loads(raw)
        if envelope.get("t") == "SIM":
            events.append(envelope["body"])

    written = []

    # cumulative fleet energy
    times, cumulative = [], []
    total = 0.0
    for e in events:
        if e.get("event") == "traffic":
            total += ROLE_POWER_W[SensorRole(e["role"])] * e["dt_ms"] / 3_600_000.0
            times.append(e["time"] / 3_600_000.0)
            cumulative.append(total)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(times, cumulative, lw=1.2)
    ax.set_xlabel("hours")
    ax.set_ylabel("fleet Wh")
    ax.set_title("cumulative fleet energy")
    path = out_dir / "energy_timeline.svg"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    # alert timeline
    alert_times = [e["time"] / 3_600_000.0 for e in events if e.get("event") == "alert"]
    fig, ax = plt.subplots(figsize=(7, 2.5))
    if alert_times:
        ax.eventplot(alert_times, lineoffsets=0.5, linelengths=0.8)
    ax.set_xlabel("hours")
    ax.set_yticks([])
    ax.set_title(f"alerts ({len(alert_times)})")
    path = out_dir / "alerts_timeline.svg"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written
