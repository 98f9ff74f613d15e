"""Operator-facing HTTP/WS control API served by the master.

Endpoints (all JSON unless noted):
    GET  /api/v1/status             master + per-slave states
    GET  /api/v1/slaves             slave inventory
    POST /api/v1/runs               start a run -> {run_id}
    POST /api/v1/runs/{id}/stop     stop the active run early
    GET  /api/v1/runs/{id}          run metadata + integrity report
    GET  /api/v1/runs/{id}/data.csv the recorded run file
    WS   /api/v1/live               live frames, at most 10 per second
    POST /api/v1/debug/loss         inject frame loss into in-process slaves
"""

from __future__ import annotations

import asyncio
import os
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .core import AcquisitionConfig, TestType, VibedaqError, validate_config
from .master import MasterError, SessionStatus

LIVE_FRAME_INTERVAL_S = 0.1


class RunRequest(BaseModel):
    test_type: str
    fs_hz: float
    range_g: int
    duration_s: int


class LossRequest(BaseModel):
    probability: float


def create_app(runtime, static_dir: str | None = None) -> FastAPI:
    coordinator = runtime.coordinator
    app = FastAPI(title="vibedaq master", version="1")

    @app.get("/api/v1/status")
    def status():
        return coordinator.status_snapshot()

    @app.get("/api/v1/slaves")
    def slaves():
        snapshot = coordinator.status_snapshot()
        return [
            {"slave_id": int(sid), **info} for sid, info in sorted(snapshot["slaves"].items())
        ]

    @app.post("/api/v1/runs")
    def start_run(req: RunRequest):
        try:
            test_type = TestType[req.test_type]
        except KeyError:
            raise HTTPException(status_code=400, detail=f"unknown test_type {req.test_type!r}")
        config = AcquisitionConfig(
            run_id=coordinator.allocate_run_id(),
            test_type=test_type,
            odr_hz=req.fs_hz,
            range_g=req.range_g,
            duration_s=req.duration_s,
        )
        violations = validate_config(config)
        if violations:
            raise HTTPException(status_code=400, detail="; ".join(violations))
        try:
            session = coordinator.start_run(config)
        except MasterError as exc:
            code = 409 if "still active" in str(exc) else 400
            raise HTTPException(status_code=code, detail=str(exc)) from exc
        return {"run_id": session.run_id}

    @app.post("/api/v1/runs/{run_id}/stop")
    def stop_run(run_id: int):
        session = coordinator.history.get(run_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        if session.status is not SessionStatus.RUNNING:
            raise HTTPException(status_code=409, detail=f"run is {session.status.value}")
        try:
            coordinator.request_stop()
        except MasterError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"run_id": run_id, "status": session.status.value}

    @app.get("/api/v1/runs/{run_id}")
    def run_info(run_id: int):
        session = coordinator.history.get(run_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        report = coordinator.integrity_report(session)
        return {
            **coordinator.session_summary(session),
            "integrity": {label: asdict(c) for label, c in report.channels.items()},
        }

    @app.get("/api/v1/runs/{run_id}/data.csv")
    def run_data(run_id: int):
        session = coordinator.history.get(run_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        path = os.path.join(session.artifact_dir, "data.csv") if session.artifact_dir else ""
        if not path or not os.path.exists(path):
            raise HTTPException(status_code=404, detail="run file not written yet")
        return FileResponse(path, media_type="text/csv", filename=f"run_{run_id:06d}.csv")

    @app.websocket("/api/v1/live")
    async def live(ws: WebSocket):
        await ws.accept()
        since = 0
        try:
            while True:
                frame = coordinator.live_snapshot(since)
                await ws.send_json(frame)
                since = frame["t_us"]
                await asyncio.sleep(LIVE_FRAME_INTERVAL_S)
        except (WebSocketDisconnect, RuntimeError):
            return

    @app.post("/api/v1/debug/loss")
    def debug_loss(req: LossRequest):
        if not (0.0 <= req.probability < 1.0):
            raise HTTPException(status_code=400, detail="probability must be in [0,1)")
        try:
            runtime.set_sim_loss(req.probability)
        except VibedaqError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return {"probability": req.probability}

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="dashboard")

    return app
