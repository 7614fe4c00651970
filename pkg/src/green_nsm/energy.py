"""Fleet energy and CO2 accounting.

Per-role draw comes from the sensor board's idle/peak envelope (1 W idle,
1.5 W peak, fanless); the half-cycle figure is the linear midpoint. The legacy
sensor constant is the per-machine share of a 15-sensor facility drawing
1.38 kW. The CO2 factor reconciles the facility's published saving
(1.38 kWh -> 0.48 kWh) with its published 563.4 mg/h emission saving:
563.4 / 0.9 = 626.0 mg per kWh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .types import SensorRole, ValidationError

ROLE_POWER_W = {
    SensorRole.COLLECTION_ONLY: 1.0,
    SensorRole.HALF_CYCLE: 1.25,
    SensorRole.FULL_CYCLE: 1.5,
}
LEGACY_SENSOR_POWER_W = 92.0        # 1380 W / 15 sensors
CO2_MG_PER_KWH = 626.0

MS_PER_HOUR = 3_600_000.0


def power_draw(role: SensorRole) -> float:
    return ROLE_POWER_W[role]


def fleet_saving_percent(legacy_kwh: float, iot_kwh: float) -> float:
    if legacy_kwh <= 0:
        raise ValidationError("legacy consumption must be > 0")
    return 100.0 * (legacy_kwh - iot_kwh) / legacy_kwh


def co2_saved_mg(kwh_saved: float) -> float:
    if kwh_saved < 0:
        raise ValidationError("saved energy cannot be negative")
    return kwh_saved * CO2_MG_PER_KWH


@dataclass
class EnergyLedger:
    """Monotone per-node watt-hour accumulation."""

    role_power_w: dict = field(default_factory=lambda: dict(ROLE_POWER_W))
    wh_by_node: dict = field(default_factory=dict)

    def accumulate(self, node_id: str, role: SensorRole, dt_ms: int):
        if dt_ms < 0:
            raise ValidationError("dt_ms cannot be negative")
        wh = self.role_power_w[role] * dt_ms / MS_PER_HOUR
        self.wh_by_node[node_id] = self.wh_by_node.get(node_id, 0.0) + wh

    def node_wh(self, node_id: str) -> float:
        return self.wh_by_node.get(node_id, 0.0)

    def fleet_wh(self) -> float:
        return sum(self.wh_by_node.values())

    def fleet_kwh(self) -> float:
        return self.fleet_wh() / 1000.0
