"""Chat-completion backends: an HTTP client and a deterministic scripted one.

Both expose a single method, complete(config, messages, tools), returning a
ChatResponse. The scripted backend replays a cassette: an ordered list of
entries, each optionally gated on a substring of the last user-visible
message, consumed first-match-first.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol
from urllib.parse import urlparse

import httpx
import yaml

from .toolkit import ToolCall

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")
FINISH_REASONS = ("stop", "tool_calls", "length", "error")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    pass


class EndpointError(BackendError):
    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"HTTP {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class MalformedResponse(BackendError):
    pass


class CassetteExhausted(BackendError):
    pass


class NoMatch(BackendError):
    def __init__(self, context_excerpt: str):
        super().__init__(f"no cassette entry matches: {context_excerpt!r}")
        self.context_excerpt = context_excerpt


@dataclass(frozen=True)
class ModelConfig:
    model: str
    api_key: str = field(default="", repr=False)  # repr=False keeps secrets out of logs
    base_url: str = "http://localhost:8000/v1"
    temperature: float = 0.7
    top_p: float = 1.0
    request_timeout_s: float = 60.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"base_url not a well-formed http(s) URL: {self.base_url!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of [0, 2]: {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p out of (0, 1]: {self.top_p}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role!r}")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("tool_calls only allowed on assistant messages")
        if (self.tool_call_id is not None) != (self.role == "tool"):
            raise ValueError("tool_call_id required exactly for tool messages")


@dataclass(frozen=True)
class ChatResponse:
    message: ChatMessage
    finish_reason: str

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason: {self.finish_reason!r}")
        has_calls = bool(self.message.tool_calls)
        if has_calls != (self.finish_reason == "tool_calls"):
            raise ValueError("finish_reason must be tool_calls iff tool calls present")


def response_from(content: str = "", tool_calls: tuple[ToolCall, ...] = ()) -> ChatResponse:
    message = ChatMessage("assistant", content, tuple(tool_calls))
    return ChatResponse(message, "tool_calls" if tool_calls else "stop")


class Backend(Protocol):
    def complete(
        self, config: ModelConfig, messages: list[ChatMessage], tools: list[dict] | None = None
    ) -> ChatResponse:
        ...


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

def _message_to_wire(message: ChatMessage) -> dict:
    wire: dict[str, Any] = {"role": message.role, "content": message.content}
    if message.tool_calls:
        wire["tool_calls"] = [
            {
                "id": call.call_id or f"call_{i}",
                "type": "function",
                "function": {"name": call.tool_name, "arguments": json.dumps(call.arguments)},
            }
            for i, call in enumerate(message.tool_calls)
        ]
    if message.tool_call_id is not None:
        wire["tool_call_id"] = message.tool_call_id
    return wire


def _parse_response(body: dict) -> ChatResponse:
    try:
        choice = body["choices"][0]
        raw_message = choice["message"]
        calls = []
        for raw_call in raw_message.get("tool_calls") or []:
            fn = raw_call["function"]
            arguments = fn["arguments"]
            if isinstance(arguments, str):
                arguments = json.loads(arguments) if arguments else {}
            calls.append(ToolCall(fn["name"], arguments, call_id=raw_call.get("id")))
        message = ChatMessage("assistant", raw_message.get("content") or "", tuple(calls))
        finish = choice.get("finish_reason") or ("tool_calls" if calls else "stop")
        if (finish == "tool_calls") != bool(calls):
            finish = "tool_calls" if calls else "stop"
        return ChatResponse(message, finish if finish in FINISH_REASONS else "stop")
    except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
        raise MalformedResponse(f"cannot parse completion body: {type(exc).__name__}") from None


class HttpBackend:
    """POSTs to `<base_url>/chat/completions` with bearer auth.

    Transport failures and 5xx responses are retried up to max_retries;
    4xx responses fail immediately with EndpointError.
    """

    def __init__(self, client: httpx.Client | None = None):
        self._client = client or httpx.Client()

    def complete(
        self, config: ModelConfig, messages: list[ChatMessage], tools: list[dict] | None = None
    ) -> ChatResponse:
        if not messages or messages[0].role not in ("system", "user"):
            raise ValueError("messages must be non-empty and start with system or user")
        payload: dict[str, Any] = {
            "model": config.model,
            "messages": [_message_to_wire(m) for m in messages],
            "temperature": config.temperature,
            "top_p": config.top_p,
        }
        if tools:
            payload["tools"] = tools
        url = config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {config.api_key}"}
        last_error: Exception | None = None
        for attempt in range(config.max_retries + 1):
            try:
                response = self._client.post(
                    url, json=payload, headers=headers, timeout=config.request_timeout_s
                )
            except httpx.HTTPError as exc:
                # Never let the raw exception bubble: it may embed the URL/headers.
                last_error = TransportError(f"transport failure: {type(exc).__name__}")
                continue
            if response.status_code >= 500:
                last_error = EndpointError(response.status_code, response.text[:200])
                continue
            if response.status_code != 200:
                raise EndpointError(response.status_code, response.text[:200])
            try:
                body = response.json()
            except (json.JSONDecodeError, ValueError):
                raise MalformedResponse("response body is not JSON") from None
            return _parse_response(body)
        assert last_error is not None
        raise last_error


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CassetteEntry:
    reply: ChatResponse
    match: str | None = None  # substring of the last user-visible message


def _last_user_visible(messages: list[ChatMessage]) -> str:
    for message in reversed(messages):
        if message.role in ("user", "tool") and message.content:
            return message.content
    return ""


class ScriptedBackend:
    """Replays a cassette; also records every request for test assertions."""

    def __init__(self, cassette: list[CassetteEntry]):
        self._remaining = list(cassette)
        self.requests: list[dict] = []  # {messages, tools} per complete() call

    def complete(
        self, config: ModelConfig, messages: list[ChatMessage], tools: list[dict] | None = None
    ) -> ChatResponse:
        self.requests.append({"messages": list(messages), "tools": list(tools or [])})
        context = _last_user_visible(messages)
        if not self._remaining:
            raise CassetteExhausted(f"cassette exhausted at call {len(self.requests)}")
        for index, entry in enumerate(self._remaining):
            if entry.match is None or entry.match in context:
                del self._remaining[index]
                return entry.reply
        raise NoMatch(context[:200])

    def remaining(self) -> int:
        return len(self._remaining)


def load_cassette(path: str | Path) -> list[CassetteEntry]:
    """Cassette file: YAML list of {match: <substring|null>, reply: {content, tool_calls}}."""
    return parse_cassette(Path(path).read_text(encoding="utf-8"))


def parse_cassette(text: str) -> list[CassetteEntry]:
    raw = yaml.safe_load(text)
    if not isinstance(raw, list) or not raw:
        raise ValueError("cassette must be a non-empty YAML list")
    entries: list[CassetteEntry] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "reply" not in item:
            raise ValueError(f"cassette entry {i}: expected a map with a `reply` key")
        reply = item["reply"] or {}
        calls = tuple(
            ToolCall(raw_call["name"], raw_call.get("arguments") or {})
            for raw_call in reply.get("tool_calls") or []
        )
        entries.append(
            CassetteEntry(
                reply=response_from(reply.get("content") or "", calls),
                match=item.get("match"),
            )
        )
    return entries


def scripted_backend(cassette: list[CassetteEntry] | str | Path) -> ScriptedBackend:
    """Build a backend from entries or from a cassette file path."""
    if not isinstance(cassette, list):
        cassette = load_cassette(cassette)
    if not cassette:
        raise ValueError("cassette must be non-empty")
    return ScriptedBackend(cassette)
