"""The IoT sensor agent: role state machine, simulated capture pipeline,
local detection, storage accounting, and telemetry emission."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .protocol import (
    ControlAction,
    NeighborEdge,
    SensorState,
    TelemetryMessage,
)
from .types import (
    Alert,
    AlertKind,
    CaptureRecord,
    FlowKey,
    RecordKind,
    SensorRole,
    ValidationError,
)

DEFAULT_STORAGE_CAPACITY = 2 * 10**12       # 2 TB flash drive
STORAGE_PRESSURE_FRACTION = 0.8             # headroom for in-flight capture
MAX_TRANSITION_LATENCY_MS = 35_000          # worst-case role transition

# Daily storage growth at saturated traffic, per stored data type. Flow
# records are a session summary (~0.1% of full-capture volume), printable
# string excerpts ~1%.
FULL_CAPTURE_BYTES_PER_DAY = 10**12
FLOW_VOLUME_RATIO = 0.001
PSTR_VOLUME_RATIO = 0.01


class RuleKind(str, enum.Enum):
    SIGNATURE = "signature"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class DetectionRule:
    """Signature rules match a substring in printable packet excerpts;
    threshold rules fire when a flow's byte rate exceeds a limit."""

    kind: RuleKind
    severity: int
    alert_kind: AlertKind = AlertKind.ANOMALY
    substring: str = ""                     # signature rules
    bytes_per_sec: float = 0.0              # threshold rules
    window_ms: int = 0
    flow_predicate: Optional[str] = None    # optional protocol restriction

    def __post_init__(self):
        if self.kind is RuleKind.SIGNATURE and not self.substring:
            raise ValidationError("signature rule needs a substring")
        if self.kind is RuleKind.THRESHOLD:
            if self.bytes_per_sec <= 0:
                raise ValidationError("threshold limit must be > 0")
            if self.window_ms <= 0:
                raise ValidationError("threshold window must be > 0")


def load_ruleset(path: str | Path) -> list[DetectionRule]:
    """Read rules from a text file, one per line:

    signature|<substr>|<anomaly or attack_attempt>|<severity>
    threshold|<bytes_per_sec>|<window_ms>|<severity>
    """
    rules = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        try:
            if parts[0] == "signature" and len(parts) == 4:
                rules.append(DetectionRule(
                    kind=RuleKind.SIGNATURE,
                    substring=parts[1],
                    alert_kind=AlertKind(parts[2]),
                    severity=int(parts[3]),
                ))
            elif parts[0] == "threshold" and len(parts) == 4:
                rules.append(DetectionRule(
                    kind=RuleKind.THRESHOLD,
                    bytes_per_sec=float(parts[1]),
                    window_ms=int(parts[2]),
                    severity=int(parts[3]),
                ))
            else:
                raise ValueError(f"unknown rule shape {parts[0]!r}")
        except (ValueError, ValidationError) as e:
            raise ValidationError(f"{path}:{lineno}: {e}") from None
    return rules


@dataclass(frozen=True)
class TransitionEvent:
    node_id: str
    old_role: SensorRole
    new_role: SensorRole
    start_ms: int
    end_ms: int                             # capture suppressed in [start, end)


def apply_control(role: SensorRole, action: ControlAction,
                  target_role: Optional[SensorRole] = None) -> SensorRole:
    """Saturating three-state chain: escalate steps up, power_save steps down,
    set_role jumps."""
    if action is ControlAction.ESCALATE:
        return SensorRole(min(int(role) + 1, int(SensorRole.FULL_CYCLE)))
    if action is ControlAction.POWER_SAVE:
        return SensorRole(max(int(role) - 1, int(SensorRole.COLLECTION_ONLY)))
    if action is ControlAction.SET_ROLE:
        if target_role is None:
            raise ValidationError("set_role requires a target role")
        return target_role
    return role


@dataclass
class SensorNode:
    id: str
    role: SensorRole = SensorRole.HALF_CYCLE
    storage_capacity_bytes: int = DEFAULT_STORAGE_CAPACITY
    storage_used_bytes: int = 0
    in_transition_until: Optional[int] = None
    detection_ruleset: list[DetectionRule] = field(default_factory=list)
    telemetry_seq: int = 0
    pending_transitions: list[tuple[SensorRole, int]] = field(default_factory=list)
    anomaly_since_telemetry: bool = False
    attack_since_telemetry: bool = False
    storage_relocated: bool = False
    dropped_in_transition: int = 0
    capacity_exhausted: bool = False

    def in_transition(self, now_ms: int) -> bool:
        return self.in_transition_until is not None and now_ms < self.in_transition_until

    def sensor_state(self, now_ms: int = 0) -> SensorState:
        threshold = STORAGE_PRESSURE_FRACTION * self.storage_capacity_bytes
        if self.capacity_exhausted or self.storage_used_bytes >= threshold:
            return SensorState.STORAGE_PRESSURE
        if self.in_transition(now_ms):
            return SensorState.DEGRADED
        return SensorState.OK

    def begin_transition(self, new_role: SensorRole, now_ms: int,
                         latency_ms: int) -> Optional[TransitionEvent]:
        """Start a role change; capture is suppressed for latency_ms. A request
        arriving mid-transition queues until the current one completes."""
        if not 0 <= latency_ms <= MAX_TRANSITION_LATENCY_MS:
            raise ValidationError(
                f"transition latency {latency_ms} outside [0, {MAX_TRANSITION_LATENCY_MS}] ms")
        if self.in_transition(now_ms):
            self.pending_transitions.append((new_role, latency_ms))
            return None
        old = self.role
        self.role = new_role
        self.in_transition_until = now_ms + latency_ms
        return TransitionEvent(self.id, old, new_role, now_ms, now_ms + latency_ms)

    def complete_transitions(self, now_ms: int) -> list[TransitionEvent]:
        """Drain any queued transition once the active window has elapsed."""
        events = []
        while (self.in_transition_until is not None
               and now_ms >= self.in_transition_until
               and self.pending_transitions):
            start = self.in_transition_until
            new_role, latency = self.pending_transitions.pop(0)
            old = self.role
            self.role = new_role
            self.in_transition_until = start + latency
            events.append(TransitionEvent(self.id, old, new_role, start, start + latency))
        return events

    def step_capture(self, offered: list[CaptureRecord], now_ms: int,
                     dt_ms: int) -> tuple[list[CaptureRecord], list[Alert], int]:
        """Process one step of offered traffic: returns (stored, alerts, dropped)."""
        if dt_ms <= 0:
            raise ValidationError("dt_ms must be > 0")
        self.complete_transitions(now_ms)
        if self.in_transition(now_ms):
            self.dropped_in_transition += len(offered)
            return [], [], len(offered)

        stored: list[CaptureRecord] = []
        dropped = 0
        for record in offered:
            keep = record.kind is RecordKind.FLOW or self.role is SensorRole.FULL_CYCLE
            if not keep:
                continue
            size = record.byte_count if record.kind is RecordKind.FULL_PACKET \
                else max(1, int(record.byte_count * _STORED_RATIO[record.kind]))
            if self.storage_used_bytes + size > self.storage_capacity_bytes:
                dropped += 1
                self.capacity_exhausted = True
                continue
            self.storage_used_bytes += size
            stored.append(record)

        alerts: list[Alert] = []
        if self.role >= SensorRole.HALF_CYCLE:
            alerts = detect(offered, self.detection_ruleset, self.id, now_ms)
            for a in alerts:
                if a.kind is AlertKind.ATTACK_ATTEMPT:
                    self.attack_since_telemetry = True
                else:
                    self.anomaly_since_telemetry = True
        return stored, alerts, dropped

    def emit_telemetry(self, neighbor_edges: list[NeighborEdge],
                       now_ms: int) -> TelemetryMessage:
        self.telemetry_seq += 1
        msg = TelemetryMessage(
            sender=self.id,
            seq=self.telemetry_seq,
            sensor_state=self.sensor_state(now_ms),
            role=self.role,
            anomaly_detected=self.anomaly_since_telemetry,
            attack_detected=self.attack_since_telemetry,
            neighbor_edges=neighbor_edges,
            storage_used_fraction=min(1.0, self.storage_used_bytes / self.storage_capacity_bytes),
            storage_location_changed=self.storage_relocated,
        )
        self.anomaly_since_telemetry = False
        self.attack_since_telemetry = False
        self.storage_relocated = False
        return msg


_STORED_RATIO = {
    RecordKind.FLOW: FLOW_VOLUME_RATIO,
    RecordKind.PSTR: PSTR_VOLUME_RATIO,
    RecordKind.FULL_PACKET: 1.0,
}


def detect(records: Iterable[CaptureRecord], ruleset: list[DetectionRule],
           sensor_id: str, now_ms: int) -> list[Alert]:
    """Run the ruleset over one step of records. At most one alert per
    (rule, flow key) pair per step, ordered by rule index then flow key."""
    fired: dict[tuple[int, FlowKey], Alert] = {}
    flow_bytes: dict[FlowKey, int] = {}
    for r in records:
        flow_bytes[r.flow] = flow_bytes.get(r.flow, 0) + r.byte_count

    for idx, rule in enumerate(ruleset):
        if rule.kind is RuleKind.SIGNATURE:
            for r in records:
                if r.kind is not RecordKind.PSTR or rule.substring not in r.excerpt:
                    continue
                if rule.flow_predicate and r.flow.protocol != rule.flow_predicate:
                    continue
                key = (idx, r.flow)
                if key not in fired:
                    fired[key] = Alert(sensor_id, now_ms, rule.alert_kind,
                                       rule.severity, r.flow, 0.9)
        else:
            window_s = rule.window_ms / 1000.0
            for flow, total in flow_bytes.items():
                if total / window_s > rule.bytes_per_sec:
                    key = (idx, flow)
                    if key not in fired:
                        fired[key] = Alert(sensor_id, now_ms, AlertKind.ANOMALY,
                                           rule.severity, flow, 0.7)
    return [fired[k] for k in sorted(fired, key=lambda k: (k[0], k[1].as_tuple()))]


def storage_growth_rate(role: SensorRole,
                        offered_bytes_per_day: float = FULL_CAPTURE_BYTES_PER_DAY) -> float:
    """Bytes of storage a sensor accrues per day at the given traffic level.

    A full-cycle sensor stores the full capture; lower roles keep only flow
    summaries at FLOW_VOLUME_RATIO of the offered volume.
    """
    if offered_bytes_per_day < 0:
        raise ValidationError("offered traffic cannot be negative")
    if offered_bytes_per_day == 0:
        return 0.0
    if role is SensorRole.FULL_CYCLE:
        return offered_bytes_per_day
    return offered_bytes_per_day * FLOW_VOLUME_RATIO
