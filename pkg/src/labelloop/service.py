"""HTTP facade over runs: live annotation queue, status, and run control.

One process hosts many runs; each run's engine executes on its own thread
and is the single writer of its state. Queue submissions go through the
engine's HumanQueue, whose lock makes label transitions atomic: the first
submission for a sample wins, an identical repeat is acknowledged as a
no-op, a differing repeat is a conflict.
"""

from __future__ import annotations

import threading
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotate import HumanQueue, SubmitStatus
from .core import LoopError
from .orchestrator import Engine, config_from_mapping


class RunRequest(BaseModel):
    config: dict


class AnnotationRequest(BaseModel):
    sample_id: str
    label: str
    annotator: str = "console"


@dataclass
class ManagedRun:
    id: str
    engine: Engine
    thread: threading.Thread
    error: str | None = None


@dataclass
class RunManager:
    runs: dict[str, ManagedRun] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _counter: int = 0

    def start(self, config_mapping: dict) -> ManagedRun:
        config = config_from_mapping(config_mapping)
        engine = Engine(config)
        with self._lock:
            self._counter += 1
            run_id = f"run-{self._counter:04d}"

        managed = ManagedRun(id=run_id, engine=engine, thread=None)  # type: ignore[arg-type]

        def drive() -> None:
            try:
                engine.run()
            except Exception:
                managed.error = traceback.format_exc(limit=3)

        managed.thread = threading.Thread(target=drive, name=run_id, daemon=True)
        with self._lock:
            self.runs[run_id] = managed
        managed.thread.start()
        return managed

    def get(self, run_id: str) -> ManagedRun:
        with self._lock:
            if run_id not in self.runs:
                raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
            return self.runs[run_id]

    def listing(self) -> list[dict]:
        with self._lock:
            managed = list(self.runs.values())
        return [
            {"id": m.id, "phase": m.engine.phase, "round": len(m.engine.rounds)}
            for m in managed
        ]


def create_app(manager: RunManager | None = None, console_dir: str | Path | None = None) -> FastAPI:
    manager = manager or RunManager()
    app = FastAPI(title="labelloop")
    app.state.manager = manager

    @app.post("/runs")
    def start_run(body: RunRequest) -> dict:
        try:
            managed = manager.start(body.config)
        except (LoopError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"run_id": managed.id}

    @app.get("/runs")
    def list_runs() -> dict:
        return {"runs": manager.listing()}

    @app.get("/runs/{run_id}/queue")
    def get_queue(run_id: str, wait_ms: int = 0) -> dict:
        managed = manager.get(run_id)
        queue = managed.engine.queue
        if queue is None:
            return {"items": []}  # run has no live human annotator
        items = queue.pending_items()
        if not items and wait_ms > 0:
            items = queue.wait_for_items(wait_ms / 1000.0)
        items = sorted(items, key=lambda i: (-i.uncertainty, i.sample_id))
        return {
            "items": [
                {
                    "sample_id": i.sample_id,
                    "text": i.text,
                    "uncertainty": i.uncertainty,
                    "round": i.round,
                    "retrieved_context": [{"text": t, "label": l} for t, l in i.context],
                    "status": "pending",
                }
                for i in items
            ]
        }

    @app.post("/runs/{run_id}/annotations")
    def submit_annotation(run_id: str, body: AnnotationRequest) -> dict:
        managed = manager.get(run_id)
        queue = managed.engine.queue
        if queue is None:
            raise HTTPException(status_code=409, detail="run does not take live annotations")
        status = queue.submit(body.sample_id, body.label, body.annotator)
        if status is SubmitStatus.INVALID:
            labels = ", ".join(managed.engine.labelset.labels)
            raise HTTPException(
                status_code=422, detail=f"label {body.label!r} not in label set {{{labels}}}"
            )
        if status is SubmitStatus.CONFLICT:
            raise HTTPException(
                status_code=409, detail=f"sample {body.sample_id!r} already labeled differently"
            )
        if status is SubmitStatus.UNKNOWN:
            raise HTTPException(
                status_code=409, detail=f"sample {body.sample_id!r} is not pending"
            )
        return {"status": status.value}

    @app.get("/runs/{run_id}/status")
    def run_status(run_id: str) -> dict:
        managed = manager.get(run_id)
        out = managed.engine.status()
        out["run_id"] = run_id
        if managed.error:
            out["error"] = managed.error
        return out

    @app.post("/runs/{run_id}/stop")
    def stop_run(run_id: str) -> dict:
        managed = manager.get(run_id)
        managed.engine.request_stop()
        managed.thread.join(timeout=10.0)
        return {"status": "stopped" if not managed.thread.is_alive() else "stopping"}

    if console_dir is not None:
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


def serve(listen_addr: str, console_dir: str | Path | None = None) -> None:
    import uvicorn

    host, _, port = listen_addr.rpartition(":")
    uvicorn.run(create_app(console_dir=console_dir), host=host or "127.0.0.1", port=int(port))
