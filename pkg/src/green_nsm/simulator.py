"""Deterministic discrete-event simulator for the sensor fleet.

One seeded RNG drives everything; events run off a priority queue keyed by
(time, enqueue sequence), so the same (scenario, seed) always produces the
same NDJSON event log byte for byte. Reports are computed purely from the
event stream, which is what makes `replay` exact.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field, asdict
from typing import Optional

from .energy import CO2_MG_PER_KWH, ROLE_POWER_W, co2_saved_mg, fleet_saving_percent
from .hub import Hub, UploadPolicy, pool_filter
from .protocol import ControlAction, ControlSignal, NeighborEdge, frame
from .scenario import Scenario, ScenarioError, TrafficProfile
from .sensor import DetectionRule, SensorNode, apply_control, load_ruleset
from .types import (
    Alert,
    AlertKind,
    CaptureRecord,
    FlowKey,
    RecordKind,
    SensorRole,
    TopologyGraph,
)

DAY_MS = 86_400_000
ATTACK_MARKER = "ATTACK-MARKER"

# Confirmed alerts are matched to injected ground truth by flow key within
# this many ms of the injection.
MATCH_HORIZON_MS = 300_000

CO2_FOOTNOTE = ("hourly and daily CO2 figures in the source measurements are "
                "mutually inconsistent; this report uses the hourly basis "
                f"({CO2_MG_PER_KWH} mg/kWh)")


@dataclass
class Report:
    seed: int
    duration_ms: int
    n_sensors: int
    alerts_raw: int = 0
    alerts_confirmed: int = 0
    injected_attacks: int = 0
    injected_anomalies: int = 0
    precision_raw: float = 1.0
    precision_confirmed: float = 1.0
    recall_confirmed: float = 1.0
    recall_attacks: float = 1.0
    transition_count: int = 0
    transition_dropped_packets: int = 0
    flow_line_dropped_packets: int = 0
    relocations: int = 0
    duplicates_dropped: int = 0
    uploaded_bytes: int = 0
    per_node_wh: dict = field(default_factory=dict)
    fleet_kwh: float = 0.0
    legacy_kwh: float = 0.0
    saving_percent: float = 0.0
    co2_saved_mg: float = 0.0
    notes: tuple = (CO2_FOOTNOTE,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notes"] = list(self.notes)
        return d

    def summary_text(self) -> str:
        lines = [
            "fleet simulation report",
            f"  sensors: {self.n_sensors}, duration: {self.duration_ms / 3_600_000:.2f} h, seed: {self.seed}",
            f"  alerts: {self.alerts_raw} raw -> {self.alerts_confirmed} confirmed",
            f"  precision: raw {self.precision_raw:.3f}, confirmed {self.precision_confirmed:.3f}",
            f"  recall: confirmed {self.recall_confirmed:.3f}, attacks {self.recall_attacks:.3f}",
            f"  transitions: {self.transition_count} "
            f"(dropped {self.transition_dropped_packets} packets; "
            f"{self.flow_line_dropped_packets} after flow-line backup)",
            f"  storage relocations: {self.relocations}",
            f"  fleet energy: {self.fleet_kwh:.4f} kWh vs legacy {self.legacy_kwh:.4f} kWh "
            f"({self.saving_percent:.1f}% saved)",
            f"  CO2 saved: {self.co2_saved_mg:.1f} mg",
        ]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


class ReplayError(ValueError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _poisson(rng: random.Random, mean: float, cap: int = 50) -> int:
    if mean <= 0:
        return 0
    threshold = math.exp(-mean)
    k, p = 0, 1.0
    while k < cap:
        p *= rng.random()
        if p <= threshold:
            return k
        k += 1
    return cap


def _sim_line(body: dict) -> bytes:
    envelope = {"v": 1, "t": "SIM", "body": body}
    return json.dumps(envelope, sort_keys=True, separators=(",", ":")).encode() + b"\n"


class _Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.sc = scenario
        self.rng = random.Random(scenario.seed)
        self.log: list[bytes] = []
        self.sim_events: list[dict] = []
        self.heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._flow_counter = 0

        self.rules = _parse_rules(scenario.rules)
        initial = SensorRole.FULL_CYCLE if scenario.pin_all_full_cycle else SensorRole.HALF_CYCLE
        self.sensors: dict[str, SensorNode] = {
            sid: SensorNode(id=sid, role=initial,
                            storage_capacity_bytes=scenario.storage_capacity_bytes,
                            detection_ruleset=self.rules)
            for sid in scenario.sensor_ids()
        }
        self.site_of = {s["id"]: s.get("site", "plant") for s in scenario.sensors}
        self.hub = Hub(quiet_period_ms=scenario.quiet_period_ms,
                       alpha=scenario.utilization_alpha,
                       pool_window_ms=scenario.pool_window_ms,
                       pool_quorum=scenario.pool_quorum,
                       default_capacity_bytes=scenario.storage_capacity_bytes)
        for sid in self.sensors:
            self.hub.register(sid, initial)
        for e in scenario.edges:
            self.hub.topology.add_edge(e["a"], e["b"], e["hop_weight"], e["utilization"])
        self.neighbor_edges: dict[str, list[NeighborEdge]] = {
            sid: [NeighborEdge(peer=p, hop_weight=h, utilization=u)
                  for p, h, u in self.hub.topology.neighbors(sid)]
            for sid in self.sensors
        }
        self.pending_injected: dict[str, list[CaptureRecord]] = {sid: [] for sid in self.sensors}
        self.alerts: list[Alert] = []

    # --- event queue --------------------------------------------------------

    def _push(self, time_ms: int, kind: str, payload=None):
        if time_ms <= self.sc.duration_ms:
            heapq.heappush(self.heap, (time_ms, self._seq, kind, payload))
            self._seq += 1

    def _emit_sim(self, body: dict):
        self.sim_events.append(body)
        self.log.append(_sim_line(body))

    # --- traffic ------------------------------------------------------------

    def _profile(self, sid: str) -> TrafficProfile:
        return self.sc.profiles.get(self.site_of[sid], _DEFAULT_PROFILE)

    def _in_peak(self, now: int) -> bool:
        tod = now % DAY_MS
        return any(s <= tod < e for s, e in self.sc.peak_windows)

    def _make_traffic(self, sid: str, now: int) -> list[CaptureRecord]:
        profile = self._profile(sid)
        mult = self.sc.peak_multiplier if self._in_peak(now) else 1.0
        mean = profile.mean_flows_per_sec * (self.sc.step_ms / 1000.0) * mult
        records = []
        for _ in range(_poisson(self.rng, mean)):
            self._flow_counter += 1
            flow = FlowKey(
                src=f"10.{self.rng.randrange(256)}.{self.rng.randrange(256)}.{self.rng.randrange(2, 255)}",
                dst=f"192.168.{self.rng.randrange(256)}.{self.rng.randrange(2, 255)}",
                src_port=self.rng.randrange(1024, 65536),
                dst_port=self.rng.choice((80, 443, 22, 502, 1883)),
                protocol="tcp",
            )
            nbytes = max(64, int(self.rng.expovariate(1.0 / profile.mean_flow_bytes)))
            packets = max(1, min(nbytes, nbytes // 1500 + 1))
            records.append(CaptureRecord(RecordKind.FLOW, flow, now, now + self.sc.step_ms,
                                         nbytes, packets))
        return records

    def _handle_traffic(self, sid: str, now: int):
        node = self.sensors[sid]
        for ev in node.complete_transitions(now):
            self._emit_transition(ev)
        offered = self._make_traffic(sid, now) + self.pending_injected[sid]
        self.pending_injected[sid] = []
        in_transition = node.in_transition(now)
        stored, alerts, dropped = node.step_capture(offered, now, self.sc.step_ms)
        if (self.sc.false_positive_rate > 0 and node.role >= SensorRole.HALF_CYCLE
                and not in_transition
                and self.rng.random() < self.sc.false_positive_rate):
            alerts = alerts + [Alert(sid, now, AlertKind.ANOMALY, 2,
                                     _fp_flow(sid, now), 0.5)]
        self._emit_sim({
            "event": "traffic", "time": now, "node": sid, "role": int(node.role),
            "offered_records": len(offered),
            "offered_packets": sum(r.packet_count for r in offered),
            "stored": len(stored), "dropped_records": dropped,
            "in_transition": in_transition, "dt_ms": self.sc.step_ms,
        })
        for alert in alerts:
            self.alerts.append(alert)
            self.hub.ingest_alert(alert)
            self._emit_sim(_alert_body(alert))
        self._push(now + self.sc.step_ms, "traffic", sid)

    # --- telemetry / control -----------------------------------------------

    def _handle_telemetry(self, sid: str, now: int):
        node = self.sensors[sid]
        msg = node.emit_telemetry(self.neighbor_edges[sid], now)
        self.log.append(frame(msg))
        self.hub.ingest_telemetry(msg, now)
        self._push(now + self.sc.telemetry_interval_ms, "telemetry", sid)

    def _handle_decide(self, now: int):
        if not self.sc.pin_all_full_cycle:
            signals = self.hub.decide(now)
            self.hub.commit(signals, now)
            for sig in signals:
                self.log.append(frame(sig))
                self._apply_signal(sig, now)
        self._push(now + self.sc.decide_interval_ms, "decide", None)

    def _apply_signal(self, sig: ControlSignal, now: int):
        node = self.sensors.get(sig.target)
        if node is None:
            return
        if sig.action in (ControlAction.ESCALATE, ControlAction.POWER_SAVE,
                          ControlAction.SET_ROLE):
            new_role = apply_control(node.role, sig.action, sig.role)
            if new_role != node.role or sig.action is ControlAction.SET_ROLE:
                lo, hi = self.sc.transition_latency_ms
                latency = self.rng.randint(lo, hi)
                ev = node.begin_transition(new_role, now, latency)
                if ev is not None:
                    self._emit_transition(ev)
        elif sig.action is ControlAction.RELOCATE_STORAGE and sig.relocate_to:
            target = self.sensors.get(sig.relocate_to)
            if target is not None:
                moved = node.storage_used_bytes // 2
                moved = min(moved, target.storage_capacity_bytes - target.storage_used_bytes)
                node.storage_used_bytes -= moved
                target.storage_used_bytes += moved
                node.storage_relocated = True
                node.capacity_exhausted = False
                self._emit_sim({"event": "relocation", "time": now,
                                "source": sig.target, "target": sig.relocate_to,
                                "bytes": moved})

    def _emit_transition(self, ev):
        self._emit_sim({"event": "transition", "node": ev.node_id,
                        "start": ev.start_ms, "end": ev.end_ms,
                        "old": int(ev.old_role), "new": int(ev.new_role)})

    def _handle_injection(self, injection, now: int):
        inj_flow = FlowKey(src=f"inj-{injection.flow_id}", dst="10.0.0.1",
                           src_port=4444, dst_port=445, protocol="tcp")
        for sid in injection.sensors:
            if injection.kind == "attack":
                self.pending_injected[sid].append(CaptureRecord(
                    RecordKind.PSTR, inj_flow, now, now + 1000, 4096, 8,
                    excerpt=f"GET /{ATTACK_MARKER}/shell"))
                self.pending_injected[sid].append(CaptureRecord(
                    RecordKind.FLOW, inj_flow, now, now + 1000, 4096, 8))
            else:
                self.pending_injected[sid].append(CaptureRecord(
                    RecordKind.FLOW, inj_flow, now, now + 1000, 2_000_000, 1400))
        self._emit_sim({"event": "ground_truth", "time": now, "kind": injection.kind,
                        "flow": list(inj_flow.as_tuple()), "severity": injection.severity,
                        "sensors": list(injection.sensors)})

    # --- main loop ----------------------------------------------------------

    def run(self) -> tuple[list[bytes], Report]:
        sc = self.sc
        header = {
            "event": "init", "seed": sc.seed, "duration_ms": sc.duration_ms,
            "n_sensors": len(self.sensors), "step_ms": sc.step_ms,
            "pool_window_ms": sc.pool_window_ms, "pool_quorum": sc.pool_quorum,
            "legacy_sensor_w": sc.legacy_sensor_w,
            "infrastructure_overhead_w": sc.infrastructure_overhead_w,
            "flow_lines": sc.flow_lines,
        }
        self._emit_sim(header)
        for idx, inj in enumerate(sc.injections):
            inj.flow_id = inj.flow_id or idx + 1
            self._push(inj.time_ms, "inject", inj)
        for sid in sorted(self.sensors):
            self._push(sc.step_ms, "traffic", sid)
            self._push(sc.telemetry_interval_ms, "telemetry", sid)
        self._push(sc.decide_interval_ms, "decide", None)

        while self.heap:
            now, _, kind, payload = heapq.heappop(self.heap)
            if kind == "traffic":
                self._handle_traffic(payload, now)
            elif kind == "telemetry":
                self._handle_telemetry(payload, now)
            elif kind == "decide":
                self._handle_decide(now)
            elif kind == "inject":
                self._handle_injection(payload, now)

        if sc.upload_windows:
            policy = UploadPolicy(windows=list(sc.upload_windows),
                                  max_bytes_per_window=sc.upload_max_bytes_per_window)
            for nid, window, nbytes in self.hub.schedule_cloud_upload(policy):
                self._emit_sim({"event": "upload_plan", "node": nid,
                                "window": list(window), "bytes": nbytes})
        self._emit_sim({"event": "duplicates", "count": self.hub.duplicate_count})
        report = report_from_events(self.sim_events)
        return self.log, report


_DEFAULT_PROFILE = TrafficProfile()


def _parse_rules(lines: list[str]) -> list[DetectionRule]:
    import tempfile, os
    # reuse the file-format loader so scenarios and rule files stay in sync
    fd, path = tempfile.mkstemp(suffix=".rules")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return load_ruleset(path)
    finally:
        os.unlink(path)


def _fp_flow(sid: str, now: int) -> FlowKey:
    return FlowKey(src=f"fp-{sid}-{now}", dst="0.0.0.0", src_port=0, dst_port=0,
                   protocol="tcp")


def _alert_body(alert: Alert) -> dict:
    return {"event": "alert", "time": alert.time_ms, "sensor": alert.source,
            "kind": alert.kind.value, "severity": alert.severity,
            "confidence": alert.confidence, "flow": list(alert.flow.as_tuple())}


def run(scenario: Scenario) -> tuple[list[bytes], Report]:
    """Execute one scenario; returns (NDJSON log lines, report)."""
    return _Simulation(scenario).run()


def log_sha256(log_lines: list[bytes]) -> str:
    h = hashlib.sha256()
    for line in log_lines:
        h.update(line)
    return h.hexdigest()


# --- report derivation (shared by run and replay) ---------------------------

def report_from_events(events: list[dict]) -> Report:
    header = next((e for e in events if e.get("event") == "init"), None)
    if header is None:
        return Report(seed=0, duration_ms=0, n_sensors=0, fleet_kwh=0.0,
                      legacy_kwh=0.0, saving_percent=0.0)

    alerts: list[Alert] = []
    ground_truth: list[dict] = []
    transitions: dict[str, list[tuple[int, int]]] = {}
    traffic: list[dict] = []
    wh: dict[str, float] = {}
    dropped_packets = 0
    transition_count = 0
    relocations = 0
    uploaded = 0
    duplicates = 0

    for e in events:
        ev = e.get("event")
        if ev == "alert":
            alerts.append(Alert(e["sensor"], e["time"], AlertKind(e["kind"]),
                                e["severity"], FlowKey(*e["flow"]), e["confidence"]))
        elif ev == "ground_truth":
            ground_truth.append(e)
        elif ev == "traffic":
            traffic.append(e)
            role = SensorRole(e["role"])
            wh[e["node"]] = wh.get(e["node"], 0.0) + ROLE_POWER_W[role] * e["dt_ms"] / 3_600_000.0
            if e["in_transition"]:
                dropped_packets += e["offered_packets"]
        elif ev == "transition":
            transition_count += 1
            transitions.setdefault(e["node"], []).append((e["start"], e["end"]))
        elif ev == "relocation":
            relocations += 1
        elif ev == "upload_plan":
            uploaded += e["bytes"]
        elif ev == "duplicates":
            duplicates = e["count"]

    confirmed = pool_filter(alerts, header["pool_window_ms"], header["pool_quorum"])

    truth_index = [(FlowKey(*g["flow"]), g["time"], g["kind"]) for g in ground_truth]

    def matches_truth(flow: FlowKey, t: int) -> bool:
        return any(flow == gf and abs(t - gt) <= MATCH_HORIZON_MS
                   for gf, gt, _ in truth_index)

    def truth_hit(gf: FlowKey, gt: int, pool) -> bool:
        return any(flow == gf and abs(t - gt) <= MATCH_HORIZON_MS for flow, t in pool)

    raw_pairs = [(a.flow, a.time_ms) for a in alerts]
    conf_pairs = [(c.flow, c.first_ms) for c in confirmed]
    precision_raw = (sum(1 for f, t in raw_pairs if matches_truth(f, t)) / len(raw_pairs)
                     if raw_pairs else 1.0)
    precision_conf = (sum(1 for f, t in conf_pairs if matches_truth(f, t)) / len(conf_pairs)
                      if conf_pairs else 1.0)
    recall_conf = (sum(1 for gf, gt, _ in truth_index if truth_hit(gf, gt, conf_pairs))
                   / len(truth_index) if truth_index else 1.0)
    attacks = [(gf, gt) for gf, gt, kind in truth_index if kind == "attack"]
    recall_attacks = (sum(1 for gf, gt in attacks if truth_hit(gf, gt, conf_pairs))
                      / len(attacks) if attacks else 1.0)

    # flow-line backup: packets on a line drop only when every sensor on the
    # line is in transition at once
    line_dropped = 0
    for line in header.get("flow_lines", []):
        members = set(line)
        if not members:
            continue
        lead = sorted(members)[0]
        for e in traffic:
            if e["node"] != lead:
                continue
            t = e["time"]
            if all(_covered(transitions.get(sid, []), t) for sid in members):
                line_dropped += e["offered_packets"]

    duration_h = header["duration_ms"] / 3_600_000.0
    fleet_kwh = (sum(wh.values()) / 1000.0
                 + header["infrastructure_overhead_w"] * duration_h / 1000.0)
    legacy_kwh = header["legacy_sensor_w"] * header["n_sensors"] * duration_h / 1000.0
    saving = fleet_saving_percent(legacy_kwh, fleet_kwh) if legacy_kwh > 0 else 0.0
    co2 = co2_saved_mg(max(0.0, legacy_kwh - fleet_kwh))

    return Report(
        seed=header["seed"], duration_ms=header["duration_ms"],
        n_sensors=header["n_sensors"],
        alerts_raw=len(alerts), alerts_confirmed=len(confirmed),
        injected_attacks=sum(1 for g in ground_truth if g["kind"] == "attack"),
        injected_anomalies=sum(1 for g in ground_truth if g["kind"] == "anomaly"),
        precision_raw=precision_raw, precision_confirmed=precision_conf,
        recall_confirmed=recall_conf, recall_attacks=recall_attacks,
        transition_count=transition_count,
        transition_dropped_packets=dropped_packets,
        flow_line_dropped_packets=line_dropped,
        relocations=relocations, duplicates_dropped=duplicates,
        uploaded_bytes=uploaded,
        per_node_wh={k: round(v, 9) for k, v in sorted(wh.items())},
        fleet_kwh=fleet_kwh, legacy_kwh=legacy_kwh, saving_percent=saving,
        co2_saved_mg=co2,
    )


def _covered(windows: list[tuple[int, int]], t: int) -> bool:
    return any(s <= t < e for s, e in windows)


def replay(log_lines: list[bytes]) -> Report:
    """Recompute the report purely from a persisted event log."""
    events = []
    for i, raw in enumerate(log_lines, start=1):
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not text.endswith("\n"):
            raise ReplayError("truncated line", i)
        try:
            envelope = json.loads(text)
        except json.JSONDecodeError as e:
            raise ReplayError(f"bad JSON: {e}", i) from None
        if not isinstance(envelope, dict) or "t" not in envelope or "body" not in envelope:
            raise ReplayError("not a framed event", i)
        if envelope["t"] == "SIM":
            events.append(envelope["body"])
    return report_from_events(events)


def flow_line_backup_coverage(topology: TopologyGraph, flow_line: list[str],
                              transitions: dict[str, list[tuple[int, int]]],
                              packets: list[tuple[int, int]]) -> int:
    """Count packets on a flow line lost to role transitions.

    A packet at time t is dropped only if every sensor on the line is inside a
    transition window at t; any one sensor outside its window backs up the
    capture.
    """
    for sid in flow_line:
        if sid not in topology:
            raise ScenarioError(f"flow line sensor {sid!r} not in topology")
    if not flow_line:
        return 0
    dropped = 0
    for t, count in packets:
        if all(_covered(transitions.get(sid, []), t) for sid in flow_line):
            dropped += count
    return dropped
