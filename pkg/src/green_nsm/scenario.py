"""Scenario files: everything a simulation run needs, as one JSON document."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .advisor import GaParams
from .energy import LEGACY_SENSOR_POWER_W
from .types import Site, ValidationError


class ScenarioError(ValueError):
    """Scenario fails validation; nothing has been simulated."""


@dataclass
class TrafficProfile:
    mean_flows_per_sec: float = 0.05
    mean_flow_bytes: int = 20_000
    mean_packets_per_flow: int = 20


@dataclass
class Injection:
    time_ms: int
    kind: str                       # "attack" | "anomaly"
    sensors: list[str]
    severity: int = 5
    flow_id: int = 0                # distinguishes concurrent injections


@dataclass
class Scenario:
    seed: int = 0
    duration_ms: int = 3_600_000
    sensors: list[dict] = field(default_factory=list)       # {"id", "site"}
    edges: list[dict] = field(default_factory=list)         # {"a","b","hop_weight","utilization"}
    profiles: dict[str, TrafficProfile] = field(default_factory=dict)
    peak_windows: list[tuple[int, int]] = field(
        default_factory=lambda: [(28_800_000, 34_200_000), (48_600_000, 52_200_000)])
    peak_multiplier: float = 3.0
    injections: list[Injection] = field(default_factory=list)
    flow_lines: list[list[str]] = field(default_factory=list)
    transition_latency_ms: tuple[int, int] = (5_000, 35_000)
    step_ms: int = 60_000
    telemetry_interval_ms: int = 60_000
    decide_interval_ms: int = 60_000
    quiet_period_ms: int = 300_000
    pool_window_ms: int = 5_000
    pool_quorum: int = 2
    utilization_alpha: float = 1.0
    rules: list[str] = field(default_factory=lambda: [
        "signature|ATTACK-MARKER|attack_attempt|5",
        "threshold|200000|1000|3",
    ])
    storage_capacity_bytes: int = 2 * 10**12
    legacy_sensor_w: float = LEGACY_SENSOR_POWER_W
    infrastructure_overhead_w: float = 0.0
    false_positive_rate: float = 0.0
    pin_all_full_cycle: bool = False
    upload_windows: list[tuple[int, int]] = field(default_factory=list)
    upload_max_bytes_per_window: int = 10**11
    ga: GaParams = field(default_factory=GaParams)

    def sensor_ids(self) -> list[str]:
        return [s["id"] for s in self.sensors]

    def validate(self):
        if self.duration_ms <= 0:
            raise ScenarioError("duration_ms must be > 0")
        if self.step_ms <= 0 or self.telemetry_interval_ms <= 0 or self.decide_interval_ms <= 0:
            raise ScenarioError("intervals must be > 0")
        ids = self.sensor_ids()
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate sensor ids")
        if not ids:
            raise ScenarioError("scenario needs at least one sensor")
        known = set(ids) | {"hub"}
        for s in self.sensors:
            try:
                Site(s.get("site", "plant"))
            except ValueError:
                raise ScenarioError(f"unknown site {s.get('site')!r}") from None
        for e in self.edges:
            for end in (e["a"], e["b"]):
                if end not in known:
                    raise ScenarioError(f"edge endpoint {end!r} is not a known node")
        for inj in self.injections:
            if inj.kind not in ("attack", "anomaly"):
                raise ScenarioError(f"unknown injection kind {inj.kind!r}")
            for sid in inj.sensors:
                if sid not in known:
                    raise ScenarioError(f"injection targets unknown sensor {sid!r}")
            if not 0 <= inj.time_ms <= self.duration_ms:
                raise ScenarioError("injection outside scenario duration")
        for line in self.flow_lines:
            for sid in line:
                if sid not in known:
                    raise ScenarioError(f"flow line names unknown sensor {sid!r}")
        lo, hi = self.transition_latency_ms
        if not 0 <= lo <= hi <= 35_000:
            raise ScenarioError("transition latency bounds outside [0, 35000] ms")
        if not 0.0 <= self.false_positive_rate <= 1.0:
            raise ScenarioError("false_positive_rate outside [0,1]")
        try:
            self.ga.validate()
        except ValidationError as e:
            raise ScenarioError(str(e)) from None

    # --- (de)serialization --------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        data = dict(raw)
        try:
            if "profiles" in data:
                data["profiles"] = {site: TrafficProfile(**p)
                                    for site, p in data["profiles"].items()}
            if "injections" in data:
                data["injections"] = [Injection(**i) for i in data["injections"]]
            if "ga" in data:
                data["ga"] = GaParams(**data["ga"])
        except TypeError as e:
            raise ScenarioError(str(e)) from None
        for key in ("transition_latency_ms",):
            if key in data:
                data[key] = tuple(data[key])
        for key in ("peak_windows", "upload_windows"):
            if key in data:
                data[key] = [tuple(w) for w in data[key]]
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ScenarioError(str(e)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}: not valid JSON ({e})") from None
        if not isinstance(raw, dict):
            raise ScenarioError(f"{path}: scenario must be a JSON object")
        return cls.from_dict(raw)
