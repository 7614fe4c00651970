"""Shared domain vocabulary: identities, roles, capture records, alerts, topology,
and the canonical fleet-state string."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional


class ValidationError(ValueError):
    """A value violates a domain invariant."""


class StateStringError(ValueError):
    """A fleet-state string segment cannot be decoded."""

    def __init__(self, message: str, segment_index: int):
        super().__init__(f"segment {segment_index}: {message}")
        self.segment_index = segment_index


class Site(str, enum.Enum):
    PLANT = "plant"
    SALES = "sales"
    SERVER_ROOM = "server-room"
    BRANCH_1 = "branch-1"
    BRANCH_2 = "branch-2"
    BRANCH_3 = "branch-3"


@dataclass(frozen=True, order=True)
class SensorId:
    """Fleet-wide unique sensor identity with its deployment site."""

    id: str
    site: Site = field(compare=False, default=Site.PLANT)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sensor id must be non-empty")


class SensorRole(enum.IntEnum):
    """Capture duty of a sensor; totally ordered by how much work the role does."""

    COLLECTION_ONLY = 0
    HALF_CYCLE = 1
    FULL_CYCLE = 2

    @property
    def char(self) -> str:
        return _ROLE_CHARS[self]

    @classmethod
    def from_char(cls, c: str) -> "SensorRole":
        try:
            return _CHARS_TO_ROLE[c]
        except KeyError:
            raise ValidationError(f"unknown role character {c!r}") from None


_ROLE_CHARS = {
    SensorRole.COLLECTION_ONLY: "C",
    SensorRole.HALF_CYCLE: "H",
    SensorRole.FULL_CYCLE: "F",
}
_CHARS_TO_ROLE = {c: r for r, c in _ROLE_CHARS.items()}


class RecordKind(str, enum.Enum):
    FULL_PACKET = "full_packet"
    FLOW = "flow"
    PSTR = "pstr"


@dataclass(frozen=True, order=True)
class FlowKey:
    src: str
    dst: str
    src_port: int
    dst_port: int
    protocol: str

    def as_tuple(self):
        return (self.src, self.dst, self.src_port, self.dst_port, self.protocol)


PSTR_EXCERPT_MAX = 256


@dataclass(frozen=True)
class CaptureRecord:
    """One captured unit of traffic: a full packet, a flow summary, or a
    printable-string excerpt."""

    kind: RecordKind
    flow: FlowKey
    start_ms: int
    end_ms: int
    byte_count: int
    packet_count: int
    payload_bytes: int = 0          # full-packet records only
    excerpt: str = ""               # pstr records only

    def __post_init__(self):
        if self.end_ms < self.start_ms:
            raise ValidationError("record end before start")
        if self.byte_count > 0 or self.packet_count > 0:
            if self.packet_count < 1:
                raise ValidationError("non-empty record needs >= 1 packet")
            if self.byte_count < self.packet_count:
                raise ValidationError("byte count below packet count")
        if self.kind is RecordKind.PSTR:
            if len(self.excerpt) > PSTR_EXCERPT_MAX:
                raise ValidationError("pstr excerpt longer than 256 chars")
            if not all(c.isprintable() for c in self.excerpt):
                raise ValidationError("pstr excerpt contains non-printable characters")


class AlertKind(str, enum.Enum):
    ANOMALY = "anomaly"
    ATTACK_ATTEMPT = "attack_attempt"


@dataclass(frozen=True)
class Alert:
    source: str                     # sensor id
    time_ms: int
    kind: AlertKind
    severity: int
    flow: FlowKey
    confidence: float

    def __post_init__(self):
        if not 1 <= self.severity <= 5:
            raise ValidationError(f"severity {self.severity} outside 1..5")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0,1]")


class TopologyGraph:
    """Undirected fleet graph: sensors plus the hub, edges weighted by hop count
    and link utilization. May be disconnected."""

    def __init__(self):
        self._vertices: set[str] = set()
        self._edges: dict[frozenset, tuple[int, float]] = {}

    @property
    def vertices(self) -> set[str]:
        return set(self._vertices)

    def add_vertex(self, v: str):
        self._vertices.add(v)

    def add_edge(self, a: str, b: str, hop_weight: int, utilization: float):
        if a == b:
            raise ValidationError("self-loop edges are not allowed")
        if hop_weight <= 0:
            raise ValidationError("hop weight must be positive")
        if not 0.0 <= utilization <= 1.0:
            raise ValidationError("utilization outside [0,1]")
        self._vertices.add(a)
        self._vertices.add(b)
        self._edges[frozenset((a, b))] = (hop_weight, utilization)

    def edges(self) -> list[tuple[str, str, int, float]]:
        out = []
        for pair, (hops, util) in self._edges.items():
            a, b = sorted(pair)
            out.append((a, b, hops, util))
        out.sort()
        return out

    def neighbors(self, v: str) -> list[tuple[str, int, float]]:
        out = []
        for pair, (hops, util) in self._edges.items():
            if v in pair:
                (other,) = pair - {v}
                out.append((other, hops, util))
        out.sort()
        return out

    def __contains__(self, v: str) -> bool:
        return v in self._vertices

    def copy(self) -> "TopologyGraph":
        g = TopologyGraph()
        g._vertices = set(self._vertices)
        g._edges = dict(self._edges)
        return g


# --- fleet-state string -----------------------------------------------------
#
# One segment per sensor, ascending id order, `|` separated:
#   <id>:<role char>:<weight 0.00-1.00>:<prob 0.00-1.00>
# Weights and probabilities are quantized to two decimals so the string is a
# stable identity for hashing and diffing.

NodeTable = dict  # str id -> (SensorRole, float weight, float prob)


def encode_system_string(node_table: dict[str, tuple[SensorRole, float, float]]) -> str:
    segments = []
    for node_id in sorted(node_table):
        role, weight, prob = node_table[node_id]
        for name, value in (("weight", weight), ("prob", prob)):
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} {value} for {node_id} outside [0,1]")
        if ":" in node_id or "|" in node_id:
            raise ValidationError(f"sensor id {node_id!r} contains a separator character")
        segments.append(f"{node_id}:{role.char}:{weight:.2f}:{prob:.2f}")
    return "|".join(segments)


def decode_system_string(s: str) -> dict[str, tuple[SensorRole, float, float]]:
    if s == "":
        return {}
    table: dict[str, tuple[SensorRole, float, float]] = {}
    for i, segment in enumerate(s.split("|")):
        parts = segment.split(":")
        if len(parts) != 4:
            raise StateStringError(f"expected 4 fields, got {len(parts)}", i)
        node_id, role_char, weight_s, prob_s = parts
        if not node_id:
            raise StateStringError("empty sensor id", i)
        try:
            role = SensorRole.from_char(role_char)
        except ValidationError as e:
            raise StateStringError(str(e), i) from None
        try:
            weight = float(weight_s)
            prob = float(prob_s)
        except ValueError:
            raise StateStringError("weight/prob not numeric", i) from None
        if not (0.0 <= weight <= 1.0 and 0.0 <= prob <= 1.0):
            raise StateStringError("weight/prob outside [0,1]", i)
        if node_id in table:
            raise StateStringError(f"duplicate sensor id {node_id}", i)
        table[node_id] = (role, weight, prob)
    return table
