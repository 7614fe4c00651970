"""Role-polymorphic IoT network-security-monitoring fleet: sensors, hub,
GA advisor, and a deterministic discrete-event simulator."""

from .types import (
    Alert,
    AlertKind,
    CaptureRecord,
    FlowKey,
    RecordKind,
    SensorId,
    SensorRole,
    Site,
    TopologyGraph,
    decode_system_string,
    encode_system_string,
)
from .sensor import SensorNode, apply_control, storage_growth_rate
from .hub import Hub, nssm_select, pool_filter
from .energy import EnergyLedger, co2_saved_mg, fleet_saving_percent, power_draw
from .scenario import Scenario
from .simulator import Report, flow_line_backup_coverage, replay, run

__all__ = [
    "Alert", "AlertKind", "CaptureRecord", "FlowKey", "RecordKind",
    "SensorId", "SensorRole", "Site", "TopologyGraph",
    "decode_system_string", "encode_system_string",
    "SensorNode", "apply_control", "storage_growth_rate",
    "Hub", "nssm_select", "pool_filter",
    "EnergyLedger", "co2_saved_mg", "fleet_saving_percent", "power_draw",
    "Scenario", "Report", "flow_line_backup_coverage", "replay", "run",
]

__version__ = "0.1.0"
