"""The IoT hub: telemetry ingestion, heuristic role decisions, neighbor storage
sharing (Dijkstra placement), alert pooling, cloud-upload scheduling, and the
operator command path."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from statistics import mean
from typing import IO, Optional

from .protocol import (
    ControlAction,
    ControlSignal,
    HqAction,
    HqCommand,
    SensorState,
    TelemetryMessage,
    frame,
)
from .types import (
    Alert,
    AlertKind,
    FlowKey,
    SensorRole,
    TopologyGraph,
    ValidationError,
    encode_system_string,
)

HUB_ID = "hub"

DEFAULT_UTILIZATION_ALPHA = 1.0     # weighting of link utilization in the path metric
DEFAULT_QUIET_PERIOD_MS = 300_000   # 5 min without alerts before power_save
STORAGE_CANDIDATE_CEILING = 0.5     # relocation targets must be majority-free
WEIGHT_EMA_DECAY = 0.9              # node weight tracks its alert rate


class NodeMode(str, enum.Enum):
    NORMAL = "normal"
    WARNING = "warning"
    ANOMALY = "anomaly"
    ATTACK = "attack"


class UnknownSensorError(KeyError):
    def __init__(self, sensor_id: str):
        super().__init__(sensor_id)
        self.sensor_id = sensor_id


@dataclass
class NodeEntry:
    role: SensorRole = SensorRole.HALF_CYCLE
    weight: float = 0.5
    prob: float = 0.5
    sensor_state: SensorState = SensorState.OK
    storage_fraction: float = 0.0
    last_seq: int = 0
    mode: NodeMode = NodeMode.NORMAL
    last_alert_ms: int = 0
    last_power_save_ms: int = 0


@dataclass(frozen=True)
class ConfirmedAlert:
    flow: FlowKey
    first_ms: int
    kind: AlertKind
    severity: int
    confidence: float
    sensors: tuple[str, ...]


def edge_cost(hop_weight: int, utilization: float,
              alpha: float = DEFAULT_UTILIZATION_ALPHA) -> float:
    return hop_weight + alpha * utilization * hop_weight


def dijkstra_distances(topology: TopologyGraph, source: str,
                       alpha: float = DEFAULT_UTILIZATION_ALPHA) -> dict[str, float]:
    """Distances from source under the hop+utilization metric; unreachable
    vertices are absent."""
    if source not in topology:
        raise ValidationError(f"source {source!r} not in topology")
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done: set[str] = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for peer, hops, util in topology.neighbors(v):
            nd = d + edge_cost(hops, util, alpha)
            if peer not in dist or nd < dist[peer]:
                dist[peer] = nd
                heapq.heappush(heap, (nd, peer))
    return dist


def nssm_select(topology: TopologyGraph, source: str,
                storage_fractions: dict[str, float],
                alpha: float = DEFAULT_UTILIZATION_ALPHA) -> Optional[str]:
    """Pick the nearest node with majority-free storage to absorb the source's
    overflow; ties go to the smaller id; None when nothing qualifies."""
    dist = dijkstra_distances(topology, source, alpha)
    best: Optional[tuple[float, str]] = None
    for node, fraction in storage_fractions.items():
        if node == source or node not in dist:
            continue
        if fraction >= STORAGE_CANDIDATE_CEILING:
            continue
        key = (dist[node], node)
        if best is None or key < best:
            best = key
    return best[1] if best else None


def pool_filter(alerts: list[Alert], window_ms: int, quorum: int) -> list[ConfirmedAlert]:
    """Second-level alert confirmation: alerts on one flow key are clustered in
    time; a cluster confirms when some window of width window_ms holds alerts
    from >= quorum distinct sensors, or when it contains a high-severity
    attack attempt (severity >= 4) — a clear attack never waits for a witness.
    """
    if window_ms <= 0:
        raise ValidationError("window_ms must be > 0")
    if quorum < 1:
        raise ValidationError("quorum must be >= 1")

    by_flow: dict[FlowKey, list[Alert]] = {}
    for a in alerts:
        by_flow.setdefault(a.flow, []).append(a)

    confirmed: list[ConfirmedAlert] = []
    for flow in sorted(by_flow, key=lambda f: f.as_tuple()):
        group = sorted(by_flow[flow], key=lambda a: (a.time_ms, a.source))
        # clusters: consecutive alerts within window_ms of each other
        clusters: list[list[Alert]] = [[group[0]]]
        for a in group[1:]:
            if a.time_ms - clusters[-1][-1].time_ms <= window_ms:
                clusters[-1].append(a)
            else:
                clusters.append([a])
        for cluster in clusters:
            if _cluster_confirms(cluster, window_ms, quorum):
                confirmed.append(ConfirmedAlert(
                    flow=flow,
                    first_ms=cluster[0].time_ms,
                    kind=(AlertKind.ATTACK_ATTEMPT
                          if any(a.kind is AlertKind.ATTACK_ATTEMPT for a in cluster)
                          else AlertKind.ANOMALY),
                    severity=max(a.severity for a in cluster),
                    confidence=mean(a.confidence for a in cluster),
                    sensors=tuple(sorted({a.source for a in cluster})),
                ))
    confirmed.sort(key=lambda c: (c.first_ms, c.flow.as_tuple()))
    return confirmed


def _cluster_confirms(cluster: list[Alert], window_ms: int, quorum: int) -> bool:
    if any(a.kind is AlertKind.ATTACK_ATTEMPT and a.severity >= 4 for a in cluster):
        return True
    for i, anchor in enumerate(cluster):
        sensors = {a.source for a in cluster[i:] if a.time_ms <= anchor.time_ms + window_ms}
        if len(sensors) >= quorum:
            return True
    return False


@dataclass
class UploadPolicy:
    windows: list[tuple[int, int]]
    max_bytes_per_window: int

    def __post_init__(self):
        ordered = sorted(self.windows)
        for (s1, e1), (s2, _) in zip(ordered, ordered[1:]):
            if s2 < e1:
                raise ValidationError("upload windows overlap")
        self.windows = ordered


class Hub:
    """Single logical event loop over telemetry, operator commands, and timers.

    Connection handlers feed messages in; nothing outside the hub touches its
    state directly.
    """

    def __init__(self, quiet_period_ms: int = DEFAULT_QUIET_PERIOD_MS,
                 alpha: float = DEFAULT_UTILIZATION_ALPHA,
                 pool_window_ms: int = 1000, pool_quorum: int = 2,
                 default_capacity_bytes: int = 2 * 10**12,
                 log_sink: Optional[IO[bytes]] = None):
        self.node_table: dict[str, NodeEntry] = {}
        self.topology = TopologyGraph()
        self.topology.add_vertex(HUB_ID)
        self.alert_pool: list[Alert] = []
        self.pending_signals: list[ControlSignal] = []
        self.duplicate_count = 0
        self.quiet_period_ms = quiet_period_ms
        self.alpha = alpha
        self.pool_window_ms = pool_window_ms
        self.pool_quorum = pool_quorum
        self.default_capacity_bytes = default_capacity_bytes
        self._log_sink = log_sink

    # --- registration / ingestion ------------------------------------------

    def register(self, sensor_id: str, role: SensorRole = SensorRole.HALF_CYCLE):
        if sensor_id not in self.node_table:
            self.node_table[sensor_id] = NodeEntry(role=role)
            self.topology.add_vertex(sensor_id)

    def _persist(self, message):
        if self._log_sink is not None:
            self._log_sink.write(frame(message))

    def ingest_telemetry(self, msg: TelemetryMessage, now_ms: int = 0) -> bool:
        """Apply one telemetry message; returns False for stale duplicates.
        Unknown senders are auto-registered (zero-configuration fleet)."""
        self.register(msg.sender)
        entry = self.node_table[msg.sender]
        if msg.seq <= entry.last_seq:
            self.duplicate_count += 1
            return False
        self._persist(msg)
        entry.last_seq = msg.seq
        entry.role = msg.role
        entry.sensor_state = msg.sensor_state
        entry.storage_fraction = msg.storage_used_fraction
        for edge in msg.neighbor_edges:
            self.topology.add_edge(msg.sender, edge.peer, edge.hop_weight, edge.utilization)
        alerted = msg.anomaly_detected or msg.attack_detected
        if msg.attack_detected:
            entry.mode = NodeMode.ATTACK
        elif msg.anomaly_detected and entry.mode is not NodeMode.ATTACK:
            entry.mode = NodeMode.ANOMALY
        if alerted:
            entry.last_alert_ms = now_ms
        entry.weight = min(1.0, WEIGHT_EMA_DECAY * entry.weight
                           + (1.0 - WEIGHT_EMA_DECAY) * (1.0 if alerted else 0.0))
        return True

    def ingest_alert(self, alert: Alert):
        self.alert_pool.append(alert)

    # --- decisions ----------------------------------------------------------

    def decide(self, now_ms: int = 0) -> list[ControlSignal]:
        """Deterministic rule table over the node table; does not mutate state.
        Operator-queued signals always come first."""
        signals: list[ControlSignal] = list(self.pending_signals)
        escalated: set[str] = set()
        for node_id in sorted(self.node_table):
            entry = self.node_table[node_id]
            if entry.mode is NodeMode.ATTACK:
                signals.append(ControlSignal(
                    target=node_id, action=ControlAction.SET_ROLE,
                    role=SensorRole.FULL_CYCLE, issued_at=now_ms,
                    cause="attack_response"))
                for peer, _, _ in self.topology.neighbors(node_id):
                    if peer in self.node_table and peer not in escalated:
                        escalated.add(peer)
                        signals.append(ControlSignal(
                            target=peer, action=ControlAction.ESCALATE,
                            issued_at=now_ms, cause="attack_neighbor_escalation"))
            elif entry.mode is NodeMode.ANOMALY:
                signals.append(ControlSignal(
                    target=node_id, action=ControlAction.ESCALATE,
                    issued_at=now_ms, cause="anomaly_escalation"))
            elif (entry.mode is NodeMode.NORMAL
                  and entry.role > SensorRole.COLLECTION_ONLY
                  and now_ms - max(entry.last_alert_ms, entry.last_power_save_ms)
                  >= self.quiet_period_ms):
                signals.append(ControlSignal(
                    target=node_id, action=ControlAction.POWER_SAVE,
                    issued_at=now_ms, cause="quiet_power_save"))
            if entry.sensor_state is SensorState.STORAGE_PRESSURE:
                target = self.nssm_select(node_id)
                if target is not None:
                    signals.append(ControlSignal(
                        target=node_id, action=ControlAction.RELOCATE_STORAGE,
                        relocate_to=target, issued_at=now_ms,
                        cause="storage_relocation"))
        return signals

    def commit(self, signals: list[ControlSignal], now_ms: int = 0):
        """Acknowledge issued signals: consume the operator queue, de-escalate
        acted-on modes, stamp power_save times, and persist each signal."""
        self.pending_signals = []
        for sig in signals:
            self._persist(sig)
            entry = self.node_table.get(sig.target)
            if entry is None:
                continue
            if sig.cause == "attack_response":
                entry.mode = NodeMode.WARNING
            elif sig.cause == "anomaly_escalation":
                entry.mode = NodeMode.WARNING
            elif sig.cause == "quiet_power_save":
                entry.last_power_save_ms = now_ms
            if sig.action is ControlAction.SET_ROLE and sig.role is not None:
                entry.role = sig.role
            elif sig.action is ControlAction.ESCALATE:
                entry.role = SensorRole(min(int(entry.role) + 1, int(SensorRole.FULL_CYCLE)))
            elif sig.action is ControlAction.POWER_SAVE:
                entry.role = SensorRole(max(int(entry.role) - 1, int(SensorRole.COLLECTION_ONLY)))
        # warning decays to normal once committed; next quiet period re-arms
        for entry in self.node_table.values():
            if entry.mode is NodeMode.WARNING:
                entry.mode = NodeMode.NORMAL

    def nssm_select(self, source: str) -> Optional[str]:
        fractions = {nid: e.storage_fraction for nid, e in self.node_table.items()}
        return nssm_select(self.topology, source, fractions, self.alpha)

    def pool(self) -> list[ConfirmedAlert]:
        confirmed = pool_filter(self.alert_pool, self.pool_window_ms, self.pool_quorum)
        self.alert_pool = []
        return confirmed

    def schedule_cloud_upload(self, policy: UploadPolicy) -> list[tuple[str, tuple[int, int], int]]:
        """Greedy plan: fullest nodes first, each window filled to its byte cap,
        remainders spilling into later windows."""
        queue = [
            [nid, int(e.storage_fraction * self.default_capacity_bytes)]
            for nid, e in sorted(self.node_table.items(),
                                 key=lambda kv: (-kv[1].storage_fraction, kv[0]))
            if e.storage_fraction > 0
        ]
        plan: list[tuple[str, tuple[int, int], int]] = []
        for window in policy.windows:
            budget = policy.max_bytes_per_window
            while budget > 0 and queue:
                nid, remaining = queue[0]
                chunk = min(budget, remaining)
                plan.append((nid, window, chunk))
                budget -= chunk
                queue[0][1] -= chunk
                if queue[0][1] == 0:
                    queue.pop(0)
        return plan

    # --- operator path ------------------------------------------------------

    def system_string(self) -> str:
        return encode_system_string(
            {nid: (e.role, e.weight, e.prob) for nid, e in self.node_table.items()})

    def state_snapshot(self) -> dict:
        return {
            "system_string": self.system_string(),
            "nodes": {
                nid: {
                    "role": e.role.name,
                    "weight": round(e.weight, 4),
                    "prob": round(e.prob, 4),
                    "sensor_state": e.sensor_state.value,
                    "storage_fraction": e.storage_fraction,
                    "mode": e.mode.value,
                    "last_seq": e.last_seq,
                }
                for nid, e in sorted(self.node_table.items())
            },
            "duplicates_dropped": self.duplicate_count,
        }

    def hq_command(self, cmd: HqCommand, now_ms: int = 0):
        """query_state returns the state snapshot; action commands queue ahead
        of autonomous decisions."""
        self._persist(cmd)
        if cmd.action is HqAction.QUERY_STATE:
            return self.state_snapshot()
        if cmd.target not in self.node_table:
            raise UnknownSensorError(cmd.target)
        signal = ControlSignal(
            target=cmd.target,
            action=ControlAction(cmd.action.value),
            role=cmd.role,
            relocate_to=cmd.relocate_to,
            window_start_ms=cmd.window_start_ms,
            window_end_ms=cmd.window_end_ms,
            issued_at=now_ms,
            cause="hq_operator",
        )
        self.pending_signals.append(signal)
        return [signal]
