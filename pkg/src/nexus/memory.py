"""Append-only session event log with role-scoped reads and JSONL persistence."""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .hierarchy import AgentKind, HierarchyGraph, descendants


class EventKind(Enum):
    SESSION_START = "session_start"
    USER_MESSAGE = "user_message"
    ASSISTANT_MESSAGE = "assistant_message"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    DELEGATION = "delegation"
    SUBTASK_RESULT = "subtask_result"
    FINALIZATION = "finalization"
    ERROR = "error"


USER = "user"  # pseudo agent id for records authored by the human


class MemoryLogError(Exception):
    """Base class for memory-store errors."""


class MalformedRecord(MemoryLogError):
    pass


class UnknownRequester(MemoryLogError):
    pass


class CorruptLog(MemoryLogError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class EventRecord:
    seq: int
    wall_time: float
    session_id: str
    agent_id: str
    kind: EventKind
    payload: dict


@dataclass(frozen=True)
class AccessScope:
    requester: str
    readable_agents: frozenset[str]


def access_scope(graph: HierarchyGraph, requester: str) -> AccessScope:
    """Readable record owners for a requester.

    Root and the user see everything (including user-authored records);
    a task supervisor sees itself plus its subtree; a worker only itself.
    """
    if requester == USER:
        return AccessScope(USER, frozenset(graph.nodes) | {USER})
    spec = graph.nodes.get(requester)
    if spec is None:
        raise UnknownRequester(requester)
    if spec.kind is AgentKind.ROOT_SUPERVISOR:
        return AccessScope(requester, frozenset(graph.nodes) | {USER})
    if spec.kind is AgentKind.TASK_SUPERVISOR:
        return AccessScope(requester, frozenset([requester, *descendants(graph, requester)]))
    return AccessScope(requester, frozenset([requester]))


class MemoryStore:
    """Per-session ordered record lists; seq gap-free from 1 per session."""

    def __init__(self) -> None:
        self._sessions: dict[str, list[EventRecord]] = {}
        self._lock = threading.RLock()
        self._listeners: list[Callable[[EventRecord], None]] = []

    def add_listener(self, listener: Callable[[EventRecord], None]) -> None:
        """Called under the store lock after every append; must not block."""
        with self._lock:
            self._listeners.append(listener)

    def append(
        self,
        session_id: str,
        agent_id: str,
        kind: EventKind | str,
        payload: dict | None = None,
        wall_time: float | None = None,
    ) -> int:
        if not session_id:
            raise MalformedRecord("session_id missing")
        if not agent_id:
            raise MalformedRecord("agent_id missing")
        try:
            kind = kind if isinstance(kind, EventKind) else EventKind(kind)
        except ValueError:
            raise MalformedRecord(f"unknown kind tag: {kind!r}") from None
        payload = payload or {}
        if kind is EventKind.DELEGATION and "delegate" not in payload:
            raise MalformedRecord("delegation record must name its delegate")
        with self._lock:
            records = self._sessions.setdefault(session_id, [])
            record = EventRecord(
                seq=len(records) + 1,
                wall_time=time.time() if wall_time is None else wall_time,
                session_id=session_id,
                agent_id=agent_id,
                kind=kind,
                payload=payload,
            )
            records.append(record)
            for listener in self._listeners:
                listener(record)
            return record.seq

    def records(self, session_id: str) -> list[EventRecord]:
        """Unscoped snapshot, seq order. Internal/audit use."""
        with self._lock:
            return list(self._sessions.get(session_id, []))

    def sessions(self) -> list[str]:
        with self._lock:
            return list(self._sessions)

    def read(
        self,
        session_id: str,
        graph: HierarchyGraph,
        requester: str,
        kinds: Iterable[EventKind | str] | None = None,
        agents: Iterable[str] | None = None,
        min_seq: int | None = None,
        max_seq: int | None = None,
    ) -> list[EventRecord]:
        """Records visible to requester, filtered, seq order. Out-of-scope
        owners are silently filtered; only unknown requesters raise."""
        scope = access_scope(graph, requester)
        kind_set = {k if isinstance(k, EventKind) else EventKind(k) for k in kinds} if kinds else None
        agent_set = set(agents) if agents else None
        out = []
        for record in self.records(session_id):
            if record.agent_id not in scope.readable_agents:
                continue
            if kind_set is not None and record.kind not in kind_set:
                continue
            if agent_set is not None and record.agent_id not in agent_set:
                continue
            if min_seq is not None and record.seq < min_seq:
                continue
            if max_seq is not None and record.seq > max_seq:
                continue
            out.append(record)
        return out

    def snapshot_and_listen(
        self, session_id: str, listener: Callable[[EventRecord], None]
    ) -> list[EventRecord]:
        """Atomically snapshot a session's records and start observing appends.

        The gateway uses this to hand a subscriber the backlog and the live
        stream without a gap or duplicate between them.
        """
        with self._lock:
            snapshot = list(self._sessions.get(session_id, []))
            self._listeners.append(listener)
            return snapshot

    def remove_listener(self, listener: Callable[[EventRecord], None]) -> None:
        with self._lock:
            if listener in self._listeners:
                self._listeners.remove(listener)

    def persist(self, session_id: str, directory: str | Path) -> Path:
        """Write `<session_id>.events.jsonl`, one record per line."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{session_id}.events.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records(session_id):
                fh.write(serialize_record(record) + "\n")
        return path


def serialize_record(record: EventRecord) -> str:
    return json.dumps(
        {
            "seq": record.seq,
            "ts": record.wall_time,
            "session": record.session_id,
            "agent": record.agent_id,
            "kind": record.kind.value,
            "payload": record.payload,
        },
        ensure_ascii=False,
    )


def replay(path: str | Path) -> MemoryStore:
    """Rebuild a store from a persisted log. Strict: any malformed or
    out-of-order line raises CorruptLog with its line number."""
    store = MemoryStore()
    expected_seq: dict[str, int] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise CorruptLog(line_no, "blank line")
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLog(line_no, f"bad JSON: {exc.msg}") from None
            try:
                seq = raw["seq"]
                record = EventRecord(
                    seq=seq,
                    wall_time=raw["ts"],
                    session_id=raw["session"],
                    agent_id=raw["agent"],
                    kind=EventKind(raw["kind"]),
                    payload=raw["payload"],
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise CorruptLog(line_no, f"bad record: {exc}") from None
            want = expected_seq.get(record.session_id, 1)
            if seq != want:
                raise CorruptLog(line_no, f"seq {seq}, expected {want}")
            expected_seq[record.session_id] = want + 1
            with store._lock:
                store._sessions.setdefault(record.session_id, []).append(record)
    return store
