"""Interactive session service backing the analyst console.

Endpoints:
    POST /sessions                       create a session (runs in a thread)
    GET  /sessions/{id}                  session summary
    GET  /sessions/{id}/events           SSE stream of round/plan/gate events
    POST /sessions/{id}/gate             approve or modify the pending step
    GET  /sessions/{id}/artifacts        produced output files
    GET  /sessions/{id}/artifacts/{name} one artifact's bytes

Every event carries a monotonically increasing id, so clients resume with
`?cursor=` or the Last-Event-ID header and re-renders stay idempotent.
Gated dual-agent sessions block before each plan step until a gate decision
arrives; `modify` swaps the step description before execution.

Auth: if GEOAGENT_TOKEN is set, requests must carry
`Authorization: Bearer <token>`.
"""
from __future__ import annotations

import json
import os
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.responses import FileResponse, StreamingResponse
from pydantic import BaseModel

from . import agents, sandbox
from .llm import BackendConfig, HttpChatBackend, LLMGateway, ScriptedBackend, load_backend_config
from .tasks import TaskSpec

EVENT_POLL_S = 0.05


class CreateSessionRequest(BaseModel):
    task: str
    domain_knowledge: str | None = None
    backend: str = "scripted"
    script: list[str] | None = None        # canned replies for backend="scripted"
    architecture: str = "single"
    gated: bool = False
    data_files: dict[str, str] | None = None
    max_rounds: int = 50
    task_budget_s: float = 600.0


class GateRequest(BaseModel):
    action: str                 # approve | modify
    step: int
    text: str | None = None


@dataclass
class GateState:
    step_index: int
    description: str
    decided: threading.Event = field(default_factory=threading.Event)
    replacement: str | None = None


class SessionRuntime:
    """One live agent run: event log, gate handshake, worker thread."""

    def __init__(self, request: CreateSessionRequest):
        self.id = uuid.uuid4().hex[:12]
        self.request = request
        self.status = "starting"
        self.events: list[dict] = []
        self.pending_gate: GateState | None = None
        self.error: str | None = None
        self._current_step: str | None = None
        self._lock = threading.Lock()
        self.workspace = Path(tempfile.mkdtemp(prefix=f"geoagent-session-{self.id}-"))
        self.task = TaskSpec(
            id=f"session-{self.id}", instruction=request.task,
            category=_session_category(), data_manifest=(),
            gold_code="", gold_outputs=(),
            domain_knowledge=request.domain_knowledge)
        self.thread = threading.Thread(target=self._run, daemon=True)

    def push(self, event_type: str, data: dict):
        with self._lock:
            self.events.append({"id": len(self.events) + 1, "type": event_type,
                                "data": data})

    def events_after(self, cursor: int) -> list[dict]:
        with self._lock:
            return self.events[cursor:]

    # -- agent plumbing ----------------------------------------------------

    def _gateway(self) -> LLMGateway:
        if self.request.backend == "scripted":
            replies = self.request.script or ["FINISH"]
            config = BackendConfig(model_id="scripted", context_limit=10_000_000)
            return LLMGateway(config, ScriptedBackend(replies))
        config = load_backend_config(self.request.backend)
        return LLMGateway(config, HttpChatBackend())

    def _on_round(self, index: int, rnd: agents.Round):
        self.push("round", {
            "index": index,
            "step": self._current_step,
            "thought": rnd.thought,
            "action_cell": rnd.action_cell,
            "executed": rnd.executed,
            "observation": rnd.observation.to_dict() if rnd.observation else None,
        })

    def _on_plan(self, plan: agents.Plan):
        self.push("plan", plan.to_dict())

    def _gate_step(self, step_index: int, description: str) -> str:
        if not self.request.gated:
            self._current_step = description
            return description
        gate = GateState(step_index, description)
        with self._lock:
            self.pending_gate = gate
        self.push("gate", {"step": step_index, "description": description})
        gate.decided.wait()
        with self._lock:
            self.pending_gate = None
        final = gate.replacement or description
        self._current_step = final
        self.push("gate_resolved", {"step": step_index, "description": final})
        return final

    def _run(self):
        try:
            for name, content in (self.request.data_files or {}).items():
                safe = Path(name).name
                (self.workspace / safe).write_text(content)
            policy = sandbox.SandboxPolicy(task_budget_s=self.request.task_budget_s)
            session = sandbox.start_session(self.workspace, policy)
            self.status = "running"
            self.push("status", {"status": "running"})
            hooks = agents.AgentHooks(on_round=self._on_round, on_plan=self._on_plan,
                                      gate_step=self._gate_step)
            limits = agents.AgentLimits(max_rounds=self.request.max_rounds,
                                        task_budget_s=self.request.task_budget_s)
            try:
                transcript = agents.run_agent(self.request.architecture, self.task,
                                              self._gateway(), session, limits, hooks=hooks)
            finally:
                sandbox.shutdown(session)
            self.status = "finished"
            self.push("status", {"status": "finished", "outcome": transcript.outcome})
        except Exception as exc:  # surface, never hang the stream
            self.status = "failed"
            self.error = str(exc)
            self.push("status", {"status": "failed", "error": str(exc)})

    def artifacts(self) -> list[dict]:
        out_dir = self.workspace / "pred_results"
        if not out_dir.is_dir():
            return []
        return [{"name": p.name, "size": p.stat().st_size}
                for p in sorted(out_dir.iterdir()) if p.is_file()]


def _session_category():
    from .tasks import TaskCategory

    return TaskCategory.UNDERSTANDING_SPATIAL_DISTRIBUTIONS


def create_app() -> FastAPI:
    app = FastAPI(title="geoagent session service")
    sessions: dict[str, SessionRuntime] = {}
    token = os.environ.get("GEOAGENT_TOKEN", "")

    def _auth(authorization: str | None):
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    def _get(session_id: str) -> SessionRuntime:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail="no such session")
        return sessions[session_id]

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest,
                       authorization: str | None = Header(default=None)):
        _auth(authorization)
        if not req.task.strip():
            raise HTTPException(status_code=400, detail="task text must be non-empty")
        if req.architecture not in ("single", "dual"):
            raise HTTPException(status_code=400, detail="architecture must be single|dual")
        runtime = SessionRuntime(req)
        sessions[runtime.id] = runtime
        runtime.thread.start()
        return {"id": runtime.id, "status": runtime.status,
                "architecture": req.architecture, "gated": req.gated,
                "domain_knowledge": req.domain_knowledge}

    @app.get("/sessions/{session_id}")
    def session_summary(session_id: str,
                        authorization: str | None = Header(default=None)):
        _auth(authorization)
        runtime = _get(session_id)
        return {"id": runtime.id, "status": runtime.status,
                "events": len(runtime.events), "error": runtime.error,
                "domain_knowledge": runtime.request.domain_knowledge,
                "pending_gate": (runtime.pending_gate.step_index
                                 if runtime.pending_gate else None)}

    @app.get("/sessions/{session_id}/events")
    def event_stream(session_id: str,
                     cursor: int = Query(default=0),
                     max_events: int = Query(default=0),
                     timeout_s: float = Query(default=30.0),
                     authorization: str | None = Header(default=None),
                     last_event_id: str | None = Header(default=None)):
        _auth(authorization)
        runtime = _get(session_id)
        start = cursor
        if last_event_id:
            try:
                start = max(start, int(last_event_id))
            except ValueError:
                pass

        def generate():
            sent = 0
            position = start
            deadline = time.monotonic() + timeout_s
            while True:
                batch = runtime.events_after(position)
                for event in batch:
                    position = event["id"]
                    sent += 1
                    yield (f"id: {event['id']}\nevent: {event['type']}\n"
                           f"data: {json.dumps(event['data'])}\n\n")
                    if max_events and sent >= max_events:
                        return
                if runtime.status in ("finished", "failed") and not runtime.events_after(position):
                    return
                if time.monotonic() > deadline:
                    return
                time.sleep(EVENT_POLL_S)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/gate")
    def gate(session_id: str, req: GateRequest,
             authorization: str | None = Header(default=None)):
        _auth(authorization)
        runtime = _get(session_id)
        pending = runtime.pending_gate
        if pending is None or pending.decided.is_set() or pending.step_index != req.step:
            raise HTTPException(status_code=409, detail="stale gate")
        if req.action == "modify":
            if not req.text:
                raise HTTPException(status_code=400, detail="modify requires text")
            pending.replacement = req.text
        elif req.action != "approve":
            raise HTTPException(status_code=400, detail="action must be approve|modify")
        pending.decided.set()
        return {"ok": True, "step": req.step, "action": req.action}

    @app.get("/sessions/{session_id}/artifacts")
    def artifacts(session_id: str, authorization: str | None = Header(default=None)):
        _auth(authorization)
        return _get(session_id).artifacts()

    @app.get("/sessions/{session_id}/artifacts/{name}")
    def artifact(session_id: str, name: str,
                 authorization: str | None = Header(default=None)):
        _auth(authorization)
        runtime = _get(session_id)
        path = runtime.workspace / "pred_results" / Path(name).name
        if not path.is_file():
            raise HTTPException(status_code=404, detail="no such artifact")
        return FileResponse(path)

    return app
