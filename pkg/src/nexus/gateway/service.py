"""HTTP and WebSocket service exposing sessions to remote consoles.

One engine per session, each turn on its own thread. Event fan-out goes
through bounded per-subscriber queues fed by memory-store listeners, so a
slow reader can never block the engine; when a queue overflows the
subscriber is marked dropped and receives a terminal `stream-dropped`
frame after draining what it has (a reconnect replays the backlog from
seq 1, so nothing is lost).

Wire frame shape: {session_id, seq, kind, agent, payload}. Control frames
use the reserved kinds `stream-dropped` and `session-closed` with seq 0.
"""
from __future__ import annotations

import json
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from fastapi import APIRouter, FastAPI, HTTPException, Query, Request, WebSocket
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import PlainTextResponse, Response, StreamingResponse
from starlette.websockets import WebSocketDisconnect

from ..backend import Backend, HttpBackend
from ..config import ArchitectureConfig, ConfigError, architecture_path, load_config, parse_config
from ..engine import (
    ABORTED,
    FINALIZED,
    EngineLimits,
    InvalidConfig,
    Session,
    SessionFinalized,
    UserTurnLimit,
    WrongSessionState,
    start_session,
)
from ..hierarchy import render_graph
from ..memory import EventKind, EventRecord, UnknownRequester

CONTROL_KINDS = ("stream-dropped", "session-closed")
POLL_S = 0.1  # queue poll interval while waiting for live frames


def frame_of(record: EventRecord) -> dict:
    return {
        "session_id": record.session_id,
        "seq": record.seq,
        "kind": record.kind.value,
        "agent": record.agent_id,
        "payload": record.payload,
    }


def control_frame(session_id: str, kind: str, reason: str) -> dict:
    return {
        "session_id": session_id,
        "seq": 0,
        "kind": kind,
        "agent": "gateway",
        "payload": {"reason": reason},
    }


class Subscriber:
    """Bounded frame queue; overflow marks the subscriber dropped."""

    def __init__(self, session_id: str, maxsize: int):
        self.session_id = session_id
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.dropped = False
        self.listener: Callable[[EventRecord], None] | None = None

    def on_record(self, record: EventRecord) -> None:
        if record.session_id != self.session_id:
            return
        self.offer(frame_of(record))

    def offer(self, frame: dict) -> None:
        if self.dropped:
            return
        try:
            self.queue.put_nowait(frame)
        except queue.Full:
            self.dropped = True

    def poll(self, timeout: float) -> dict | None:
        try:
            return self.queue.get(timeout=timeout)
        except queue.Empty:
            return None


@dataclass
class SessionHandle:
    session: Session
    subscribers: list[Subscriber] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionHub:
    """Registry of live sessions plus subscription bookkeeping."""

    def __init__(self, queue_size: int = 256, log_dir: str | Path | None = None):
        self.queue_size = queue_size
        self.log_dir = Path(log_dir) if log_dir else None
        self._lock = threading.Lock()
        self._handles: dict[str, SessionHandle] = {}

    def add(self, session: Session) -> SessionHandle:
        with self._lock:
            if session.session_id in self._handles:
                raise ValueError(f"session id already in use: {session.session_id}")
            handle = SessionHandle(session)
            self._handles[session.session_id] = handle
            return handle

    def get(self, session_id: str) -> SessionHandle | None:
        with self._lock:
            return self._handles.get(session_id)

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._handles)

    def subscribe(self, session_id: str) -> tuple[list[dict], Subscriber]:
        """Atomic backlog snapshot plus live attachment; no gap between."""
        handle = self.get(session_id)
        if handle is None:
            raise KeyError(session_id)
        sub = Subscriber(session_id, self.queue_size)
        sub.listener = sub.on_record
        backlog = handle.session.store.snapshot_and_listen(session_id, sub.listener)
        with handle.lock:
            handle.subscribers.append(sub)
        return [frame_of(r) for r in backlog], sub

    def unsubscribe(self, session_id: str, sub: Subscriber) -> None:
        handle = self.get(session_id)
        if handle is None:
            return
        if sub.listener is not None:
            handle.session.store.remove_listener(sub.listener)
        with handle.lock:
            if sub in handle.subscribers:
                handle.subscribers.remove(sub)

    def delete(self, session_id: str) -> bool:
        with self._lock:
            handle = self._handles.pop(session_id, None)
        if handle is None:
            return False
        session = handle.session
        if session.status not in (FINALIZED, ABORTED):
            session.store.append(
                session_id,
                session.root_id,
                EventKind.ERROR,
                {"where": "gateway", "message": "session-cancelled"},
            )
            session.status = ABORTED
        with handle.lock:
            subscribers = list(handle.subscribers)
        for sub in subscribers:
            sub.offer(control_frame(session_id, "session-closed", "session deleted"))
            if sub.listener is not None:
                session.store.remove_listener(sub.listener)
        if self.log_dir is not None:
            session.store.persist(session_id, self.log_dir)
        return True


def create_app(
    *,
    default_config: ArchitectureConfig | None = None,
    backend_factory: Callable[[dict], Backend] | None = None,
    limits: EngineLimits | None = None,
    queue_size: int = 256,
    log_dir: str | Path | None = None,
    token: str | None = None,
    workdir: str | Path | None = None,
) -> FastAPI:
    """Build the service. `backend_factory(body) -> Backend` lets callers
    swap the live HTTP backend for scripted ones; `token` (default: the
    NEXUS_TOKEN environment variable) switches on bearer auth."""
    required_token = token if token is not None else os.environ.get("NEXUS_TOKEN", "")
    hub = SessionHub(queue_size=queue_size, log_dir=log_dir)
    base_workdir = Path(workdir) if workdir else None

    async def require_auth(request: Request) -> None:
        if required_token and request.headers.get("authorization") != f"Bearer {required_token}":
            raise HTTPException(status_code=401, detail="missing or invalid service token")

    def ws_authorized(websocket: WebSocket) -> bool:
        if not required_token:
            return True
        if websocket.headers.get("authorization") == f"Bearer {required_token}":
            return True
        return websocket.query_params.get("token") == required_token

    router = APIRouter(dependencies=[])

    def get_handle(session_id: str) -> SessionHandle:
        handle = hub.get(session_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return handle

    @router.post("/sessions", status_code=201)
    async def create_session(request: Request) -> dict:
        await require_auth(request)
        body = await _json_body(request)
        config_name = body.get("config_name")
        inline = body.get("inline_config")
        if config_name and inline:
            raise HTTPException(400, "provide config_name or inline_config, not both")
        env = dict(os.environ)
        try:
            if config_name:
                config = load_config(architecture_path(str(config_name)), env)
            elif inline:
                config = parse_config(str(inline), env)
            elif default_config is not None:
                config = default_config
            else:
                raise HTTPException(400, "provide config_name or inline_config")
            backend = backend_factory(body) if backend_factory else HttpBackend()
            session_id = body.get("session_id")
            if session_id is not None and (not isinstance(session_id, str) or not session_id):
                raise HTTPException(400, "session_id must be a non-empty string")
            session = start_session(
                config,
                backend,
                limits,
                session_id=session_id,
                workdir=base_workdir / session_id if base_workdir and session_id else None,
            )
        except (ConfigError, InvalidConfig) as exc:
            raise HTTPException(400, str(exc)) from exc
        try:
            hub.add(session)
        except ValueError as exc:
            raise HTTPException(409, str(exc)) from exc
        return {"session_id": session.session_id, "status": session.status}

    @router.post("/sessions/{session_id}/message", status_code=202)
    async def post_message(session_id: str, request: Request) -> dict:
        await require_auth(request)
        handle = get_handle(session_id)
        body = await _json_body(request)
        text = body.get("text")
        if not isinstance(text, str) or not text:
            raise HTTPException(400, "text must be a non-empty string")
        try:
            # claim synchronously so a busy session is a deterministic 409
            handle.session.begin_turn()
        except (SessionFinalized, WrongSessionState, UserTurnLimit) as exc:
            raise HTTPException(409, str(exc)) from exc
        thread = threading.Thread(
            target=_run_turn, args=(handle.session, text), daemon=True
        )
        thread.start()
        return {"session_id": session_id, "status": "accepted"}

    @router.get("/sessions/{session_id}")
    async def session_status(session_id: str, request: Request) -> dict:
        await require_auth(request)
        handle = get_handle(session_id)
        session = handle.session
        return {
            "session_id": session_id,
            "status": session.status,
            "user_turns": session.counters.user_turns,
            "llm_calls": session.counters.llm_calls,
        }

    @router.get("/sessions/{session_id}/graph", response_class=PlainTextResponse)
    async def session_graph(session_id: str, request: Request) -> str:
        await require_auth(request)
        return render_graph(get_handle(session_id).session.graph)

    @router.get("/sessions/{session_id}/memory")
    async def session_memory(
        session_id: str, request: Request, requester: str = Query("user", alias="as")
    ) -> dict:
        await require_auth(request)
        session = get_handle(session_id).session
        try:
            records = session.store.read(session_id, session.graph, requester)
        except UnknownRequester as exc:
            raise HTTPException(400, str(exc)) from exc
        return {"requester": requester, "records": [frame_of(r) for r in records]}

    @router.delete("/sessions/{session_id}", status_code=204, response_class=Response)
    async def delete_session(session_id: str, request: Request) -> Response:
        await require_auth(request)
        if not hub.delete(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return Response(status_code=204)

    app = FastAPI(title="nexus gateway")
    app.include_router(router)
    app.state.hub = hub

    @app.websocket("/sessions/{session_id}/events")
    async def session_events(websocket: WebSocket, session_id: str) -> None:
        await websocket.accept()
        if not ws_authorized(websocket):
            await websocket.close(code=1008, reason="missing or invalid service token")
            return
        try:
            backlog, sub = hub.subscribe(session_id)
        except KeyError:
            await websocket.close(code=1008, reason=f"unknown session {session_id!r}")
            return
        try:
            for frame in backlog:
                await websocket.send_json(frame)
            while True:
                frame = await run_in_threadpool(sub.poll, POLL_S)
                if frame is None:
                    if sub.dropped and sub.queue.empty():
                        await websocket.send_json(
                            control_frame(session_id, "stream-dropped", "subscriber too slow")
                        )
                        break
                    continue
                await websocket.send_json(frame)
                if frame["kind"] in CONTROL_KINDS:
                    break
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            hub.unsubscribe(session_id, sub)
            try:
                await websocket.close()
            except RuntimeError:
                pass

    @app.get("/sessions/{session_id}/events/sse")
    async def session_events_sse(session_id: str, request: Request) -> StreamingResponse:
        await require_auth(request)
        handle = get_handle(session_id)
        backlog, sub = hub.subscribe(session_id)

        async def stream():
            try:
                for frame in backlog:
                    yield _sse_line(frame)
                while True:
                    frame = await run_in_threadpool(sub.poll, POLL_S)
                    if frame is None:
                        if sub.dropped and sub.queue.empty():
                            yield _sse_line(
                                control_frame(session_id, "stream-dropped", "subscriber too slow")
                            )
                            break
                        # the stream ends once the session is terminal and drained
                        if handle.session.status in (FINALIZED, ABORTED):
                            break
                        continue
                    yield _sse_line(frame)
                    if frame["kind"] in CONTROL_KINDS:
                        break
            finally:
                hub.unsubscribe(session_id, sub)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _run_turn(session: Session, text: str) -> None:
    try:
        session.run_claimed_turn(text)
    except Exception:
        # aborts are already recorded as error events in the session log
        pass


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except json.JSONDecodeError:
        raise HTTPException(400, "request body must be JSON") from None
    if not isinstance(body, dict):
        raise HTTPException(400, "request body must be a JSON object")
    return body


def _sse_line(frame: dict) -> str:
    return f"id: {frame['seq']}\ndata: {json.dumps(frame, ensure_ascii=False)}\n\n"
