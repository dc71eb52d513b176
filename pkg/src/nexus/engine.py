"""Delegation engine: supervisor decision loops, worker tool loops, budgets.

A session owns one hierarchy, one memory log, one tool registry, and one
chat backend. Each user turn is driven by the root supervisor: it may ask
the user a question, hand subtasks to its children (with bounded retries
and reallocation), and eventually finalize an answer. Task supervisors run
the same decide/delegate cycle one level down. Workers run bounded
tool-calling loops and see only their own slice of session memory.

Every decision is grounded in the memory log: an agent's prompt is its
system message plus a rendering of the records its role may read, capped
by a character budget (oldest records dropped first).
"""
from __future__ import annotations

import json
import re
import tempfile
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

from .backend import Backend, BackendError, ChatMessage, ChatResponse, ModelConfig
from .config import ArchitectureConfig, ConfigError, lower
from .hierarchy import (
    AgentKind,
    HierarchyError,
    HierarchyGraph,
    children,
    root_of,
    validate,
)
from .memory import USER, EventKind, EventRecord, MemoryStore
from .toolkit import (
    ToolDescriptor,
    ToolParameter,
    ToolRegistry,
    ToolResult,
    ToolkitError,
    descriptor_to_wire,
)

# session lifecycle states
AWAITING_USER = "awaiting_user"
PLANNING = "planning"
DELEGATING = "delegating"
FINALIZED = "finalized"
ABORTED = "aborted"

# instruction templates for supervisor re-consults; fixed wording so scripted
# cassettes can match on stable substrings
SUBTASK_OK_TEMPLATE = (
    "Subtask update: {name} reported:\n{answer}\n"
    "Decide the next step: delegate further work or provide the final answer."
)
SUBTASK_FAILED_TEMPLATE = (
    "Subtask update: delegation to {name} failed: {reason}. You may delegate "
    "again with different instructions, pick another agent, or answer directly."
)
RETRY_TEMPLATE = (
    "Delegation attempt {attempt} to {name} failed: {reason}. Re-instruct the "
    "same agent, reallocate to a sibling, or resolve the subtask yourself."
)
CORRECTIVE_TEMPLATE = (
    "The tool call `{tool}` is not available here. Choose one of: {options}."
)
AGGREGATE_INSTRUCTION = (
    "Combine the subtask results in your session memory into one final, "
    "consolidated answer for the user."
)

ASK_USER_TOOL = "ask_user"
DELEGATE_PREFIX = "delegate_"


class EngineError(Exception):
    pass


class InvalidConfig(EngineError):
    pass


class SessionFinalized(EngineError):
    """The session already reached a terminal state."""


class WrongSessionState(EngineError):
    """The call does not fit the session's current lifecycle state."""


class UserTurnLimit(EngineError):
    pass


class LlmCallLimit(EngineError):
    pass


class UnknownDelegate(EngineError):
    """A supervisor kept naming a target that is not one of its children."""

    def __init__(self, supervisor_id: str, tool_name: str):
        super().__init__(f"{supervisor_id}: unresolvable delegation target {tool_name!r}")
        self.supervisor_id = supervisor_id
        self.tool_name = tool_name


@dataclass(frozen=True)
class EngineLimits:
    max_user_turns: int = 20
    max_delegation_attempts: int = 3  # per subtask, counting the first try
    max_intra_iterations: int = 10  # completions per worker loop
    max_total_llm_calls: int = 200  # per session, all agents combined
    prompt_char_budget: int = 32000  # memory rendering cap per prompt

    def __post_init__(self) -> None:
        for name in (
            "max_user_turns",
            "max_delegation_attempts",
            "max_intra_iterations",
            "max_total_llm_calls",
            "prompt_char_budget",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class AskUser:
    question: str


@dataclass(frozen=True)
class Delegate:
    target: str  # child agent id
    instruction: str


@dataclass(frozen=True)
class Finalize:
    answer: str


DelegationDecision = Union[AskUser, Delegate, Finalize]


@dataclass(frozen=True)
class Answer:
    text: str


@dataclass(frozen=True)
class Failed:
    reason: str


WorkerOutcome = Union[Answer, Failed]


@dataclass
class Counters:
    user_turns: int = 0
    llm_calls: int = 0
    delegation_attempts: list = field(default_factory=list)  # attempts per subtask
    intra_iterations: dict = field(default_factory=dict)  # agent id -> completions


_ASK_USER_DESCRIPTOR = ToolDescriptor(
    ASK_USER_TOOL,
    "Ask the user a clarifying question and wait for the reply.",
    {"question": ToolParameter("string", "The question to put to the user.")},
)

_FALLBACK_MODEL = ModelConfig(model="scripted")


def _delegate_tool_name(agent_name: str) -> str:
    return DELEGATE_PREFIX + re.sub(r"\W", "_", agent_name)


class Session:
    """One conversation over one agent hierarchy.

    Turns are single-threaded: `begin_turn` claims the session (anything
    else gets WrongSessionState until the turn ends), which gives services
    a race-free busy signal.
    """

    def __init__(
        self,
        session_id: str,
        graph: HierarchyGraph,
        registry: ToolRegistry,
        models: dict[str, ModelConfig],
        backend: Backend,
        limits: EngineLimits | None = None,
        store: MemoryStore | None = None,
        workdir: str | Path | None = None,
    ):
        violations = validate(graph)
        if violations:
            raise InvalidConfig("; ".join(str(v) for v in violations))
        self.session_id = session_id
        self.graph = graph
        self.registry = registry
        self.models = dict(models)
        self.backend = backend
        self.limits = limits or EngineLimits()
        self.store = store if store is not None else MemoryStore()
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="nexus-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.root_id = root_of(graph)
        self.status = AWAITING_USER
        self.counters = Counters()
        self._lock = threading.Lock()
        self._call_seq = 0
        self.store.append(
            session_id,
            self.root_id,
            EventKind.SESSION_START,
            {"agents": [spec.name for spec in graph.nodes.values()]},
        )

    # -- lifecycle ----------------------------------------------------------

    def begin_turn(self) -> None:
        """Claim the session for one user turn; raises instead of queueing."""
        with self._lock:
            if self.status in (FINALIZED, ABORTED):
                raise SessionFinalized(f"session is {self.status}")
            if self.status != AWAITING_USER:
                raise WrongSessionState(f"a turn is already in progress ({self.status})")
            if self.counters.user_turns >= self.limits.max_user_turns:
                raise UserTurnLimit(f"user turn limit {self.limits.max_user_turns} reached")
            self.counters.user_turns += 1
            self.status = PLANNING

    def user_turn(self, text: str) -> tuple[list[EventRecord], DelegationDecision]:
        """Run one full turn; returns the records it appended and the
        decision that ended it (AskUser or Finalize)."""
        self.begin_turn()
        return self.run_claimed_turn(text)

    def run_claimed_turn(self, text: str) -> tuple[list[EventRecord], DelegationDecision]:
        if self.status != PLANNING:
            raise WrongSessionState("begin_turn() must claim the session first")
        start = len(self.store.records(self.session_id))
        try:
            decision = self._drive_root(text)
        except BackendError as exc:
            self._abort("backend", str(exc))
            raise
        except LlmCallLimit as exc:
            self._abort("engine", str(exc))
            raise
        except UnknownDelegate as exc:
            self._abort(exc.supervisor_id, str(exc))
            raise
        return self.store.records(self.session_id)[start:], decision

    def _abort(self, where: str, message: str) -> None:
        self.store.append(
            self.session_id, self.root_id, EventKind.ERROR, {"where": where, "message": message}
        )
        self.status = ABORTED

    def _drive_root(self, text: str) -> DelegationDecision:
        self.store.append(self.session_id, USER, EventKind.USER_MESSAGE, {"text": text})
        decision = self.supervisor_decide(self.root_id, text, allow_ask_user=True)
        while isinstance(decision, Delegate):
            self.status = DELEGATING
            result = self.run_delegation(self.root_id, decision)
            self.status = PLANNING
            decision = self.supervisor_decide(
                self.root_id, self._update_instruction(result), allow_ask_user=False
            )
        if isinstance(decision, AskUser):
            self.store.append(
                self.session_id,
                self.root_id,
                EventKind.ASSISTANT_MESSAGE,
                {"text": decision.question},
            )
            self.status = AWAITING_USER
        else:
            self.store.append(
                self.session_id, self.root_id, EventKind.FINALIZATION, {"answer": decision.answer}
            )
            self.status = FINALIZED
        return decision

    def _update_instruction(self, result: dict) -> str:
        name = self.graph.nodes[result["delegate"]].name
        if result["status"] == "ok":
            return SUBTASK_OK_TEMPLATE.format(name=name, answer=result["answer"])
        return SUBTASK_FAILED_TEMPLATE.format(name=name, reason=result["reason"])

    # -- supervisor side ----------------------------------------------------

    def supervisor_decide(
        self, supervisor_id: str, instruction: str, allow_ask_user: bool = True
    ) -> DelegationDecision:
        """One decision from a supervisor: ask the user (root only),
        delegate to a child, or finalize. A tool call that names anything
        else earns one corrective re-prompt, then UnknownDelegate."""
        spec = self.graph.nodes[supervisor_id]
        targets: dict[str, str] = {}
        wire: list[dict] = []
        for child_id in children(self.graph, supervisor_id):
            child = self.graph.nodes[child_id]
            pseudo = _delegate_tool_name(child.name)
            if pseudo in targets:
                raise InvalidConfig(f"delegation tool name collision: {pseudo}")
            targets[pseudo] = child_id
            wire.append(
                descriptor_to_wire(
                    ToolDescriptor(
                        pseudo,
                        f"Hand a subtask to the agent {child.name}.",
                        {
                            "instruction": ToolParameter(
                                "string", "Complete, self-contained instructions for the subtask."
                            )
                        },
                    )
                )
            )
        offer_ask = allow_ask_user and spec.kind is AgentKind.ROOT_SUPERVISOR
        if offer_ask:
            wire.append(descriptor_to_wire(_ASK_USER_DESCRIPTOR))

        messages = [
            ChatMessage("system", self._system_content(supervisor_id)),
            ChatMessage("user", instruction),
        ]
        response = self._complete(supervisor_id, messages, wire)
        decision = self._route_decision(response, targets, offer_ask)
        if decision is not None:
            return decision

        bad = response.message.tool_calls[0].tool_name
        self.store.append(
            self.session_id,
            supervisor_id,
            EventKind.ERROR,
            {"where": supervisor_id, "message": f"unknown-delegate: {bad}"},
        )
        assistant, tool_feedback = self._tool_error_feedback(response, "unknown-tool")
        options = sorted(targets) + ([ASK_USER_TOOL] if offer_ask else [])
        messages.append(assistant)
        messages.extend(tool_feedback)
        messages.append(
            ChatMessage("user", CORRECTIVE_TEMPLATE.format(tool=bad, options=", ".join(options)))
        )
        response = self._complete(supervisor_id, messages, wire)
        decision = self._route_decision(response, targets, offer_ask)
        if decision is not None:
            return decision
        raise UnknownDelegate(supervisor_id, response.message.tool_calls[0].tool_name)

    def _route_decision(
        self, response: ChatResponse, targets: dict[str, str], offer_ask: bool
    ) -> DelegationDecision | None:
        """Map a completion onto a decision; None means re-promptable junk."""
        message = response.message
        if not message.tool_calls:
            return Finalize(message.content)
        call = message.tool_calls[0]  # one decision per consult, extras ignored
        if offer_ask and call.tool_name == ASK_USER_TOOL:
            question = call.arguments.get("question")
            return AskUser(question) if isinstance(question, str) and question else None
        target = targets.get(call.tool_name)
        if target is None:
            return None
        instruction = call.arguments.get("instruction")
        if not isinstance(instruction, str) or not instruction:
            return None
        return Delegate(target, instruction)

    def _tool_error_feedback(
        self, response: ChatResponse, error: str
    ) -> tuple[ChatMessage, list[ChatMessage]]:
        """Assistant message with synthesized call ids plus matching tool
        error results, so the transcript stays protocol-valid."""
        calls = tuple(
            replace(c, call_id=c.call_id or self._next_call_id())
            for c in response.message.tool_calls
        )
        assistant = replace(response.message, tool_calls=calls)
        feedback = [
            ChatMessage(
                "tool",
                json.dumps({"error": error, "tool": c.tool_name}, ensure_ascii=False),
                tool_call_id=c.call_id,
            )
            for c in calls
        ]
        return assistant, feedback

    def run_delegation(self, supervisor_id: str, decision: Delegate) -> dict:
        """Drive one subtask to a single recorded outcome.

        Failed attempts send the failure back to the delegating supervisor,
        which may re-instruct the same child, move the work to a sibling,
        or resolve the subtask itself. The attempt budget covers the whole
        subtask regardless of which child ends up holding it.
        """
        current = decision
        cap = self.limits.max_delegation_attempts
        for attempt in range(1, cap + 1):
            target = current.target
            self.store.append(
                self.session_id,
                supervisor_id,
                EventKind.DELEGATION,
                {"delegate": target, "instruction": current.instruction, "attempt": attempt},
            )
            outcome = self._execute_subtask(target, current.instruction)
            if isinstance(outcome, Answer):
                result = {
                    "delegate": target,
                    "status": "ok",
                    "attempts": attempt,
                    "answer": outcome.text,
                }
                self.store.append(self.session_id, target, EventKind.SUBTASK_RESULT, result)
                self.counters.delegation_attempts.append(attempt)
                return result
            if attempt == cap:
                break
            retry = self.supervisor_decide(
                supervisor_id,
                RETRY_TEMPLATE.format(
                    attempt=attempt, name=self.graph.nodes[target].name, reason=outcome.reason
                ),
                allow_ask_user=False,
            )
            if isinstance(retry, Finalize):
                # the supervisor absorbed the subtask and answered it itself
                result = {
                    "delegate": target,
                    "status": "ok",
                    "attempts": attempt,
                    "answer": retry.answer,
                    "resolved_by": supervisor_id,
                }
                self.store.append(self.session_id, supervisor_id, EventKind.SUBTASK_RESULT, result)
                self.counters.delegation_attempts.append(attempt)
                return result
            current = retry
        result = {
            "delegate": current.target,
            "status": "failed",
            "attempts": cap,
            "reason": "delegation-exhausted",
        }
        self.store.append(self.session_id, supervisor_id, EventKind.SUBTASK_RESULT, result)
        self.counters.delegation_attempts.append(cap)
        return result

    def _execute_subtask(self, target: str, instruction: str) -> WorkerOutcome:
        if self.graph.nodes[target].kind is AgentKind.WORKER:
            return self.worker_loop(target, instruction)
        return self._run_subtree(target, instruction)

    def _run_subtree(self, supervisor_id: str, instruction: str) -> WorkerOutcome:
        """A task supervisor handles its subtask with the same decide &
        delegate cycle; its Finalize is the subtask answer."""
        try:
            decision = self.supervisor_decide(supervisor_id, instruction, allow_ask_user=False)
            while isinstance(decision, Delegate):
                result = self.run_delegation(supervisor_id, decision)
                decision = self.supervisor_decide(
                    supervisor_id, self._update_instruction(result), allow_ask_user=False
                )
            return Answer(decision.answer)
        except UnknownDelegate as exc:
            return Failed(str(exc))

    # -- worker side --------------------------------------------------------

    def worker_loop(self, worker_id: str, instruction: str) -> WorkerOutcome:
        """Bounded tool-calling loop; a plain assistant reply is the answer."""
        spec = self.graph.nodes[worker_id]
        wire = [
            descriptor_to_wire(self.registry.descriptor(name))
            for name in spec.tool_refs
            if name in self.registry
        ]
        messages = [
            ChatMessage("system", self._system_content(worker_id)),
            ChatMessage("user", instruction),
        ]
        for _ in range(self.limits.max_intra_iterations):
            self.counters.intra_iterations[worker_id] = (
                self.counters.intra_iterations.get(worker_id, 0) + 1
            )
            response = self._complete(worker_id, messages, wire or None)
            message = response.message
            if not message.tool_calls:
                self.store.append(
                    self.session_id,
                    worker_id,
                    EventKind.ASSISTANT_MESSAGE,
                    {"text": message.content},
                )
                return Answer(message.content)
            calls = tuple(
                replace(c, call_id=c.call_id or self._next_call_id()) for c in message.tool_calls
            )
            messages.append(replace(message, tool_calls=calls))
            for call in calls:
                self.store.append(
                    self.session_id,
                    worker_id,
                    EventKind.TOOL_CALL,
                    {"tool": call.tool_name, "arguments": call.arguments, "call_id": call.call_id},
                )
                if call.tool_name not in spec.tool_refs:
                    # declared toolset is a hard boundary, not a suggestion
                    result = ToolResult(
                        "error", {"error": "tool-not-available", "tool": call.tool_name}
                    )
                else:
                    result = self.registry.invoke(call, self.workdir)
                self.store.append(
                    self.session_id,
                    worker_id,
                    EventKind.TOOL_RESULT,
                    {
                        "tool": call.tool_name,
                        "call_id": call.call_id,
                        "status": result.status,
                        "payload": result.payload,
                    },
                )
                messages.append(
                    ChatMessage(
                        "tool",
                        json.dumps(result.payload, ensure_ascii=False),
                        tool_call_id=call.call_id,
                    )
                )
        return Failed("iteration-cap")

    # -- aggregation --------------------------------------------------------

    def aggregate(self, supervisor_id: str | None = None) -> str:
        """One-shot consolidation of recorded subtask results into a single
        answer. Reads memory, calls the model once, appends nothing."""
        supervisor_id = supervisor_id or self.root_id
        results = self.store.read(
            self.session_id, self.graph, supervisor_id, kinds=[EventKind.SUBTASK_RESULT]
        )
        if not results:
            raise ValueError("aggregate requires at least one recorded subtask result")
        response = self._complete(
            supervisor_id,
            [
                ChatMessage("system", self._system_content(supervisor_id)),
                ChatMessage("user", AGGREGATE_INSTRUCTION),
            ],
            None,
        )
        return response.message.content

    # -- shared plumbing ----------------------------------------------------

    def _complete(
        self, agent_id: str, messages: list[ChatMessage], tools: list[dict] | None
    ) -> ChatResponse:
        with self._lock:
            if self.counters.llm_calls >= self.limits.max_total_llm_calls:
                raise LlmCallLimit(
                    f"llm call budget {self.limits.max_total_llm_calls} exhausted"
                )
            self.counters.llm_calls += 1
        spec = self.graph.nodes[agent_id]
        config = self.models.get(spec.model_ref or agent_id, _FALLBACK_MODEL)
        return self.backend.complete(config, messages, tools)

    def _next_call_id(self) -> str:
        self._call_seq += 1
        return f"call_{self._call_seq}"

    def _system_content(self, agent_id: str) -> str:
        rendered = self._render_memory(agent_id)
        system_message = self.graph.nodes[agent_id].system_message
        if not rendered:
            return system_message
        return f"{system_message}\n\n## Session memory (oldest first)\n{rendered}"

    def _render_memory(self, agent_id: str) -> str:
        records = self.store.read(self.session_id, self.graph, agent_id)
        lines = [
            f"[{r.seq}] {r.agent_id}/{r.kind.value}: "
            f"{json.dumps(r.payload, ensure_ascii=False)}"
            for r in records
        ]
        budget = self.limits.prompt_char_budget
        total = sum(len(line) + 1 for line in lines)
        while lines and total > budget:
            total -= len(lines.pop(0)) + 1
        if not lines and records:
            # a single oversized record still gets its newest tail in
            return lines_tail(records, budget)
        return "\n".join(lines)


def lines_tail(records: list[EventRecord], budget: int) -> str:
    last = records[-1]
    line = (
        f"[{last.seq}] {last.agent_id}/{last.kind.value}: "
        f"{json.dumps(last.payload, ensure_ascii=False)}"
    )
    return line[-budget:]


def start_session(
    config: ArchitectureConfig,
    backend: Backend,
    limits: EngineLimits | None = None,
    *,
    session_id: str | None = None,
    store: MemoryStore | None = None,
    workdir: str | Path | None = None,
) -> Session:
    """Lower an architecture config and open a session over it."""
    try:
        graph, registry, models = lower(config)
    except (ConfigError, HierarchyError, ToolkitError) as exc:
        raise InvalidConfig(str(exc)) from exc
    return Session(
        session_id=session_id or f"s-{uuid.uuid4().hex[:12]}",
        graph=graph,
        registry=registry,
        models=models,
        backend=backend,
        limits=limits,
        store=store,
        workdir=workdir,
    )
