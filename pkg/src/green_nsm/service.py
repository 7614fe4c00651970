"""FastAPI service exposing the hub: telemetry ingestion, operator (HQ)
commands, the control-signal queue, state queries, and on-demand simulation
runs. The CLI talks to these endpoints as a thin client."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel

from . import simulator
from .hub import Hub, UnknownSensorError
from .protocol import (
    ControlSignal,
    FrameDecodeError,
    HqCommand,
    IncompleteFrameError,
    ProtocolError,
    TelemetryMessage,
    VersionMismatchError,
    frame,
    parse,
)
from .scenario import Scenario, ScenarioError


class IngestResponse(BaseModel):
    accepted: bool
    duplicates_dropped: int


class SignalsResponse(BaseModel):
    signals: list[ControlSignal]


class SimulationRequest(BaseModel):
    scenario: dict
    seed: Optional[int] = None


class SimulationResponse(BaseModel):
    report: dict
    log_sha256: str
    summary: str


class AckResponse(BaseModel):
    ack: bool
    target: str
    queued_signals: int


def create_app(hub: Optional[Hub] = None) -> FastAPI:
    app = FastAPI(title="green-nsm hub", version="1")
    app.state.hub = hub or Hub()
    app.state.clock_ms = 0

    def _now() -> int:
        return app.state.clock_ms

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/state")
    def state():
        return app.state.hub.state_snapshot()

    @app.post("/v1/clock")
    def set_clock(body: dict):
        # the hub never reads a wall clock; whoever drives it owns time
        app.state.clock_ms = int(body["now_ms"])
        return {"now_ms": app.state.clock_ms}

    @app.post("/v1/telemetry", response_model=IngestResponse)
    async def telemetry(request: Request):
        msg = await _parse_frame(request, TelemetryMessage)
        accepted = app.state.hub.ingest_telemetry(msg, _now())
        return IngestResponse(accepted=accepted,
                              duplicates_dropped=app.state.hub.duplicate_count)

    @app.post("/v1/hq")
    async def hq(request: Request):
        cmd = await _parse_frame(request, HqCommand)
        try:
            result = app.state.hub.hq_command(cmd, _now())
        except UnknownSensorError as e:
            raise HTTPException(status_code=404, detail=f"unknown sensor {e.sensor_id}")
        if isinstance(result, dict):
            return result
        return AckResponse(ack=True, target=cmd.target or "",
                           queued_signals=len(result))

    @app.post("/v1/signals", response_model=SignalsResponse)
    def signals():
        """Current decision output: operator-queued signals first, then the
        hub's autonomous rules."""
        out = app.state.hub.decide(_now())
        app.state.hub.commit(out, _now())
        return SignalsResponse(signals=out)

    @app.post("/v1/signals/frame")
    def signals_framed():
        """Same as /v1/signals but in wire format, one frame per line."""
        out = app.state.hub.decide(_now())
        app.state.hub.commit(out, _now())
        return Response(content=b"".join(frame(s) for s in out),
                        media_type="application/x-ndjson")

    @app.post("/v1/simulations", response_model=SimulationResponse)
    def simulations(req: SimulationRequest):
        try:
            scenario = Scenario.from_dict(req.scenario)
            if req.seed is not None:
                scenario.seed = req.seed
            log, report = simulator.run(scenario)
        except ScenarioError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return SimulationResponse(report=report.to_dict(),
                                  log_sha256=simulator.log_sha256(log),
                                  summary=report.summary_text())

    return app


async def _parse_frame(request: Request, expected: type):
    body = await request.body()
    try:
        msg = parse(body)
    except VersionMismatchError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except (IncompleteFrameError, FrameDecodeError, ProtocolError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    if not isinstance(msg, expected):
        raise HTTPException(status_code=400,
                            detail=f"expected a {expected.__name__} frame")
    return msg


app = create_app()
