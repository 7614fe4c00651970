"""Versioned NDJSON wire protocol between sensors, hub, and the HQ client.

One message per line: a UTF-8 JSON object with fields `v` (protocol version),
`t` (TEL / CTL / HQ) and `body`, keys serialized in lexicographic order so a
given message always frames to the same bytes. The same format doubles as the
persisted event-log format, which keeps logs replayable as live streams.
"""

from __future__ import annotations

import enum
import json
from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from .types import SensorRole

PROTOCOL_VERSION = 1


class ProtocolError(Exception):
    """Base class for framing/parsing failures."""


class IncompleteFrameError(ProtocolError):
    """Input did not contain one complete newline-terminated line."""


class FrameDecodeError(ProtocolError):
    """Line is not valid JSON or its body fails message validation."""


class UnknownTypeError(ProtocolError):
    """Type tag is outside the TEL/CTL/HQ alphabet."""


class VersionMismatchError(ProtocolError):
    def __init__(self, seen: object):
        super().__init__(f"unsupported protocol version {seen!r}")
        self.seen = seen


class SensorState(str, enum.Enum):
    OK = "ok"
    DEGRADED = "degraded"
    STORAGE_PRESSURE = "storage_pressure"


class NeighborEdge(BaseModel):
    peer: str
    hop_weight: int = Field(gt=0)
    utilization: float = Field(ge=0.0, le=1.0)


class TelemetryMessage(BaseModel):
    sender: str
    seq: int = Field(ge=1)
    sensor_state: SensorState
    role: SensorRole
    anomaly_detected: bool
    attack_detected: bool
    neighbor_edges: list[NeighborEdge] = Field(default_factory=list)
    storage_used_fraction: float = Field(ge=0.0, le=1.0)
    storage_location_changed: bool = False


class ControlAction(str, enum.Enum):
    ESCALATE = "escalate"
    POWER_SAVE = "power_save"
    SET_ROLE = "set_role"
    RELOCATE_STORAGE = "relocate_storage"
    SCHEDULE_UPLOAD = "schedule_upload"


class ControlSignal(BaseModel):
    target: str
    action: ControlAction
    issued_at: int = 0
    cause: str = ""
    role: Optional[SensorRole] = None              # set_role only
    relocate_to: Optional[str] = None              # relocate_storage only
    window_start_ms: Optional[int] = None          # schedule_upload only
    window_end_ms: Optional[int] = None

    @model_validator(mode="after")
    def _check_action_payload(self):
        if self.action is ControlAction.SET_ROLE and self.role is None:
            raise ValueError("set_role requires a role")
        if self.action is ControlAction.RELOCATE_STORAGE:
            if not self.relocate_to:
                raise ValueError("relocate_storage requires a target node")
            if self.relocate_to == self.target:
                raise ValueError("cannot relocate storage onto the same sensor")
        if self.action is ControlAction.SCHEDULE_UPLOAD:
            if self.window_start_ms is None or self.window_end_ms is None:
                raise ValueError("schedule_upload requires a window")
            if self.window_end_ms <= self.window_start_ms:
                raise ValueError("upload window must have positive width")
        return self


class HqAction(str, enum.Enum):
    QUERY_STATE = "query_state"
    ESCALATE = "escalate"
    POWER_SAVE = "power_save"
    SET_ROLE = "set_role"
    RELOCATE_STORAGE = "relocate_storage"
    SCHEDULE_UPLOAD = "schedule_upload"


class HqCommand(BaseModel):
    """Operator command: the control-signal vocabulary plus query_state."""

    action: HqAction
    target: Optional[str] = None
    role: Optional[SensorRole] = None
    relocate_to: Optional[str] = None
    window_start_ms: Optional[int] = None
    window_end_ms: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        if self.action is not HqAction.QUERY_STATE and not self.target:
            raise ValueError(f"{self.action.value} requires a target sensor")
        if self.action is HqAction.SET_ROLE and self.role is None:
            raise ValueError("set_role requires a role")
        return self


Message = Union[TelemetryMessage, ControlSignal, HqCommand]

_TAGS: dict[type, str] = {
    TelemetryMessage: "TEL",
    ControlSignal: "CTL",
    HqCommand: "HQ",
}
_TYPES = {tag: cls for cls, tag in _TAGS.items()}


def _body_dict(message: Message) -> dict:
    return message.model_dump(mode="json", exclude_none=True)


def frame(message: Message) -> bytes:
    """Serialize one message to its canonical newline-terminated line."""
    try:
        tag = _TAGS[type(message)]
    except KeyError:
        raise FrameDecodeError(f"cannot frame {type(message).__name__}") from None
    envelope = {"v": PROTOCOL_VERSION, "t": tag, "body": _body_dict(message)}
    line = json.dumps(envelope, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return line.encode("utf-8") + b"\n"


def parse(data: bytes | str) -> Message:
    """Decode one framed line back into a message; strict inverse of frame()."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    if not data.endswith("\n"):
        raise IncompleteFrameError("input is not a complete newline-terminated line")
    line = data[:-1]
    if not line or "\n" in line:
        raise IncompleteFrameError("expected exactly one non-empty line")
    try:
        envelope = json.loads(line)
    except json.JSONDecodeError as e:
        raise FrameDecodeError(f"bad JSON: {e}") from None
    if not isinstance(envelope, dict):
        raise FrameDecodeError("frame is not a JSON object")
    version = envelope.get("v")
    if version != PROTOCOL_VERSION:
        raise VersionMismatchError(version)
    tag = envelope.get("t")
    if tag not in _TYPES:
        raise UnknownTypeError(f"unknown type tag {tag!r}")
    body = envelope.get("body")
    if not isinstance(body, dict):
        raise FrameDecodeError("missing or non-object body")
    try:
        return _TYPES[tag].model_validate(body)
    except PydanticValidationError as e:
        raise FrameDecodeError(str(e)) from None
