import json

import pytest
from fastapi.testclient import TestClient

from green_nsm.protocol import (
    ControlAction,
    ControlSignal,
    HqAction,
    HqCommand,
    SensorState,
    TelemetryMessage,
    frame,
)
from green_nsm.service import create_app
from green_nsm.types import SensorRole

from conftest import small_fleet_scenario


@pytest.fixture()
def client():
    return TestClient(create_app())


def telemetry_frame(sender="s1", seq=1, attack=False, storage=0.0):
    return frame(TelemetryMessage(
        sender=sender, seq=seq, sensor_state=SensorState.OK,
        role=SensorRole.HALF_CYCLE, anomaly_detected=False,
        attack_detected=attack, storage_used_fraction=storage))


class TestHealth:
    def test_healthz(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}


class TestTelemetryEndpoint:
    def test_ingest_and_state(self, client):
        r = client.post("/v1/telemetry", content=telemetry_frame())
        assert r.status_code == 200
        assert r.json()["accepted"] is True
        state = client.get("/v1/state").json()
        assert "s1" in state["nodes"]
        assert state["system_string"].startswith("s1:H:")

    def test_duplicate_seq_rejected_not_erroring(self, client):
        client.post("/v1/telemetry", content=telemetry_frame(seq=2))
        r = client.post("/v1/telemetry", content=telemetry_frame(seq=2))
        assert r.status_code == 200
        assert r.json() == {"accepted": False, "duplicates_dropped": 1}

    def test_bad_frame_400(self, client):
        r = client.post("/v1/telemetry", content=b"not json\n")
        assert r.status_code == 400

    def test_version_mismatch_400(self, client):
        r = client.post("/v1/telemetry", content=b'{"body":{},"t":"TEL","v":9}\n')
        assert r.status_code == 400
        assert "9" in r.json()["detail"]

    def test_wrong_frame_type_400(self, client):
        ctl = frame(ControlSignal(target="s1", action=ControlAction.ESCALATE))
        assert client.post("/v1/telemetry", content=ctl).status_code == 400


class TestHqEndpoint:
    def test_query_state(self, client):
        client.post("/v1/telemetry", content=telemetry_frame())
        r = client.post("/v1/hq", content=frame(HqCommand(action=HqAction.QUERY_STATE)))
        assert r.status_code == 200
        assert r.json()["system_string"] == "s1:H:0.45:0.50"

    def test_set_role_acks(self, client):
        client.post("/v1/telemetry", content=telemetry_frame())
        cmd = HqCommand(action=HqAction.SET_ROLE, target="s1", role=SensorRole.FULL_CYCLE)
        r = client.post("/v1/hq", content=frame(cmd))
        assert r.status_code == 200
        assert r.json()["ack"] is True and r.json()["target"] == "s1"

    def test_unknown_sensor_404_names_id(self, client):
        cmd = HqCommand(action=HqAction.SET_ROLE, target="s99", role=SensorRole.FULL_CYCLE)
        r = client.post("/v1/hq", content=frame(cmd))
        assert r.status_code == 404
        assert "s99" in r.json()["detail"]


class TestSignalsEndpoint:
    def test_operator_signal_first_in_queue(self, client):
        client.post("/v1/telemetry", content=telemetry_frame("s1"))
        client.post("/v1/telemetry", content=telemetry_frame("s2", attack=True))
        cmd = HqCommand(action=HqAction.POWER_SAVE, target="s1")
        client.post("/v1/hq", content=frame(cmd))
        signals = client.post("/v1/signals").json()["signals"]
        assert signals[0]["cause"] == "hq_operator"
        assert any(s["target"] == "s2" and s["action"] == "set_role" for s in signals)

    def test_framed_signal_stream_parses(self, client):
        client.post("/v1/telemetry", content=telemetry_frame("s1", attack=True))
        r = client.post("/v1/signals/frame")
        lines = [l for l in r.content.split(b"\n") if l]
        for line in lines:
            envelope = json.loads(line)
            assert envelope["t"] == "CTL" and envelope["v"] == 1


class TestSimulationsEndpoint:
    def test_run_scenario_over_http(self, client):
        sc = small_fleet_scenario(seed=21, duration_ms=600_000)
        body = {"scenario": {
            "seed": sc.seed, "duration_ms": sc.duration_ms,
            "sensors": sc.sensors, "edges": sc.edges,
        }}
        r = client.post("/v1/simulations", json=body)
        assert r.status_code == 200
        payload = r.json()
        assert payload["report"]["n_sensors"] == 3
        assert len(payload["log_sha256"]) == 64
        # same request twice -> identical log hash
        assert client.post("/v1/simulations", json=body).json()["log_sha256"] == \
            payload["log_sha256"]

    def test_invalid_scenario_422(self, client):
        r = client.post("/v1/simulations",
                        json={"scenario": {"sensors": [], "duration_ms": 100}})
        assert r.status_code == 422
