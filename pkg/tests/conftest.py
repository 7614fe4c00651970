import random

import pytest

from green_nsm.scenario import Scenario
from green_nsm.types import FlowKey


def make_flow(i: int = 0, proto: str = "tcp") -> FlowKey:
    return FlowKey(src=f"10.0.0.{i % 250 + 1}", dst="192.168.1.1",
                   src_port=40000 + i, dst_port=443, protocol=proto)


def small_fleet_scenario(seed: int = 1, duration_ms: int = 3_600_000, **overrides) -> Scenario:
    sensors = [{"id": f"s{i:02d}", "site": "plant"} for i in range(1, 4)]
    edges = [{"a": s["id"], "b": "hub", "hop_weight": 1, "utilization": 0.1}
             for s in sensors]
    edges += [{"a": "s01", "b": "s02", "hop_weight": 1, "utilization": 0.1},
              {"a": "s02", "b": "s03", "hop_weight": 2, "utilization": 0.2}]
    base = dict(seed=seed, duration_ms=duration_ms, sensors=sensors, edges=edges)
    base.update(overrides)
    return Scenario(**base)


def plant_fleet_scenario(n: int = 15, seed: int = 1,
                         duration_ms: int = 86_400_000, **overrides) -> Scenario:
    sites = ["plant"] * 7 + ["sales", "server-room"] + \
        ["branch-1", "branch-1", "branch-2", "branch-2", "branch-3", "branch-3"]
    sensors = [{"id": f"s{i:02d}", "site": sites[i % len(sites)]} for i in range(n)]
    rng = random.Random(seed)
    edges = [{"a": s["id"], "b": "hub", "hop_weight": rng.randint(1, 4),
              "utilization": round(rng.random(), 2)} for s in sensors]
    for i in range(n - 1):
        edges.append({"a": f"s{i:02d}", "b": f"s{i + 1:02d}",
                      "hop_weight": rng.randint(1, 3),
                      "utilization": round(rng.random(), 2)})
    base = dict(seed=seed, duration_ms=duration_ms, sensors=sensors, edges=edges)
    base.update(overrides)
    return Scenario(**base)
