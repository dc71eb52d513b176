"""Tool schemas, argument validation, wire export, and execution bindings.

A tool is a declarative descriptor plus a binding string naming the
implementation: a built-in, a `cmd:` shell template, or a dotted import
path. Every failure mode of invoke() is carried inside the ToolResult so
an agent loop can feed it back to the model instead of crashing.
"""
from __future__ import annotations

import importlib
import logging
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

log = logging.getLogger(__name__)

NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
PARAM_TYPES = ("string", "number", "boolean")
DEFAULT_TIMEOUT_S = 120.0
OUTPUT_CAP_BYTES = 64 * 1024  # run_command stdout/stderr cap, each


class ToolkitError(Exception):
    pass


class DuplicateTool(ToolkitError):
    pass


class UnresolvableBinding(ToolkitError):
    pass


class ToolFailure(Exception):
    """Raised inside built-ins; converted to ToolResult{status: error}."""


@dataclass(frozen=True)
class ToolParameter:
    type: str
    description: str = ""
    enum_values: tuple | None = None
    required: bool = True


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str = ""
    parameters: dict[str, ToolParameter] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not NAME_RE.match(self.name):
            raise ToolkitError(f"invalid tool name: {self.name!r}")
        for param_name, param in self.parameters.items():
            if not NAME_RE.match(param_name):
                raise ToolkitError(f"{self.name}: invalid parameter name {param_name!r}")
            if param.type not in PARAM_TYPES:
                raise ToolkitError(f"{self.name}.{param_name}: unknown type {param.type!r}")
            if param.enum_values is not None:
                if len(param.enum_values) == 0:
                    raise ToolkitError(f"{self.name}.{param_name}: empty enum")
                for value in param.enum_values:
                    if not _type_ok(param.type, value):
                        raise ToolkitError(
                            f"{self.name}.{param_name}: enum value {value!r} not of type {param.type}"
                        )


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: dict[str, Any]
    call_id: str | None = None


@dataclass(frozen=True)
class ToolResult:
    status: str  # "ok" | "error"
    payload: dict[str, Any]
    duration: float = 0.0


def _type_ok(type_tag: str, value: Any) -> bool:
    if type_tag == "string":
        return isinstance(value, str)
    if type_tag == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, bool)


def validate_args(descriptor: ToolDescriptor, arguments: dict[str, Any]) -> list[str]:
    """Total: never raises. Empty list means the arguments are acceptable."""
    violations: list[str] = []
    if not isinstance(arguments, dict):
        return [f"arguments-not-a-map({type(arguments).__name__})"]
    for param_name, param in descriptor.parameters.items():
        if param_name not in arguments:
            if param.required:
                violations.append(f"missing-required({param_name})")
            continue
        value = arguments[param_name]
        if not _type_ok(param.type, value):
            violations.append(f"type-mismatch({param_name})")
            continue
        if param.enum_values is not None and value not in param.enum_values:
            violations.append(f"enum-mismatch({param_name})")
    for provided in arguments:
        if provided not in descriptor.parameters:
            violations.append(f"unknown-param({provided})")
    return violations


# ---------------------------------------------------------------------------
# Wire schema export (chat-completions function format)
# ---------------------------------------------------------------------------

def descriptor_to_wire(descriptor: ToolDescriptor) -> dict:
    properties: dict[str, dict] = {}
    required: list[str] = []
    for param_name, param in descriptor.parameters.items():
        prop: dict[str, Any] = {"type": param.type, "description": param.description}
        if param.enum_values is not None:
            prop["enum"] = list(param.enum_values)
        properties[param_name] = prop
        if param.required:
            required.append(param_name)
    return {
        "type": "function",
        "function": {
            "name": descriptor.name,
            "description": descriptor.description,
            "parameters": {"type": "object", "properties": properties, "required": required},
        },
    }


def wire_to_descriptor(wire: dict) -> ToolDescriptor:
    fn = wire["function"]
    schema = fn.get("parameters") or {"properties": {}, "required": []}
    required = set(schema.get("required", []))
    parameters: dict[str, ToolParameter] = {}
    for param_name, prop in schema.get("properties", {}).items():
        parameters[param_name] = ToolParameter(
            type=prop["type"],
            description=prop.get("description", ""),
            enum_values=tuple(prop["enum"]) if "enum" in prop else None,
            required=param_name in required,
        )
    return ToolDescriptor(name=fn["name"], description=fn.get("description", ""), parameters=parameters)


# ---------------------------------------------------------------------------
# Execution context and confinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToolContext:
    workdir: Path  # session root; the file store lives in workdir/files/

    def confine(self, relative: str | Path) -> Path:
        """Resolve a path against the session root, rejecting escapes."""
        root = self.workdir.resolve()
        candidate = (root / relative).resolve()
        if candidate != root and root not in candidate.parents:
            raise ToolFailure(f"path-escape: {relative}")
        return candidate

    @property
    def files_dir(self) -> Path:
        return self.workdir / "files"


Runner = Callable[[dict, ToolContext, float], dict]


# ---------------------------------------------------------------------------
# Built-in tools
# ---------------------------------------------------------------------------

def _save_code(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    target = ctx.confine(Path("files") / args["name"])
    target.parent.mkdir(parents=True, exist_ok=True)
    content = args["content"]
    target.write_text(content, encoding="utf-8")
    return {"path": f"files/{args['name']}", "bytes": len(content.encode("utf-8"))}


def _get_code(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    target = ctx.confine(Path("files") / args["name"])
    if not target.is_file():
        raise ToolFailure(f"not-found: {args['name']}")
    return {"name": args["name"], "content": target.read_text(encoding="utf-8")}


def _truncate(data: bytes) -> tuple[str, bool]:
    truncated = len(data) > OUTPUT_CAP_BYTES
    if truncated:
        data = data[:OUTPUT_CAP_BYTES]
    return data.decode("utf-8", errors="replace"), truncated


def _run_shell(cmd: str, ctx: ToolContext, cwd: Path, timeout_s: float) -> dict:
    proc = subprocess.run(
        cmd, shell=True, cwd=cwd, capture_output=True, timeout=timeout_s
    )
    stdout, out_cut = _truncate(proc.stdout)
    stderr, err_cut = _truncate(proc.stderr)
    return {
        "exit_code": proc.returncode,
        "stdout": stdout,
        "stderr": stderr,
        "stdout_truncated": out_cut,
        "stderr_truncated": err_cut,
    }


def _run_command(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    cwd = ctx.confine(args.get("workdir", "."))
    if not cwd.is_dir():
        raise ToolFailure(f"workdir-not-found: {args.get('workdir')}")
    timeout = float(args.get("timeout_s", timeout_s))
    return _run_shell(args["cmd"], ctx, cwd, timeout)


def _write_file(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    target = ctx.confine(args["path"])
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(args["content"], encoding="utf-8")
    return {"path": args["path"], "bytes": len(args["content"].encode("utf-8"))}


def _read_file(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    target = ctx.confine(args["path"])
    if not target.is_file():
        raise ToolFailure(f"not-found: {args['path']}")
    return {"path": args["path"], "content": target.read_text(encoding="utf-8")}


def _symbolic_math_stand_in(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
    # Deterministic stand-in: echoes the request in a structured reply so
    # scripted sessions and config fixtures exercise the full call path
    # without a symbolic engine behind it.
    operation = args.get("operation", "simplify")
    expression = args.get("expression", "")
    variables = args.get("variables", "")
    return {
        "operation": operation,
        "expression": expression,
        "variables": variables,
        "result": f"{operation}[{expression}]",
    }


_P = ToolParameter

BUILTIN_DESCRIPTORS: dict[str, ToolDescriptor] = {
    "save_code": ToolDescriptor(
        "save_code",
        "Store a named code artifact in the session file store.",
        {"name": _P("string", "Artifact name, e.g. solution.py"),
         "content": _P("string", "Full file content")},
    ),
    "get_code": ToolDescriptor(
        "get_code",
        "Retrieve a previously saved code artifact by name.",
        {"name": _P("string", "Artifact name used with save_code")},
    ),
    "run_command": ToolDescriptor(
        "run_command",
        "Run a shell command inside the session workdir and capture its output.",
        {"cmd": _P("string", "Shell command line"),
         "timeout_s": _P("number", "Seconds before the command is killed", required=False),
         "workdir": _P("string", "Subdirectory to run in, relative to the session root", required=False)},
    ),
    "write_file": ToolDescriptor(
        "write_file",
        "Write a file at a path relative to the session root.",
        {"path": _P("string", "Relative file path"),
         "content": _P("string", "Full file content")},
    ),
    "read_file": ToolDescriptor(
        "read_file",
        "Read a file at a path relative to the session root.",
        {"path": _P("string", "Relative file path")},
    ),
    "symbolic_math_operations": ToolDescriptor(
        "symbolic_math_operations",
        "Perform a symbolic mathematical operation on an expression.",
        {"operation": _P("string", "The operation to perform",
                         enum_values=("differentiate", "integrate", "simplify",
                                      "solve", "expand", "factor", "limit")),
         "expression": _P("string", "The expression as a string"),
         "variables": _P("string", "Comma-separated variable names", required=False)},
    ),
}

BUILTIN_RUNNERS: dict[str, Runner] = {
    "save_code": _save_code,
    "get_code": _get_code,
    "run_command": _run_command,
    "write_file": _write_file,
    "read_file": _read_file,
    "symbolic_math_operations": _symbolic_math_stand_in,
}


def builtin_binding(name: str, timeout_s: float | None = None) -> "ToolBinding":
    return ToolBinding(BUILTIN_DESCRIPTORS[name], name, timeout_s)


# ---------------------------------------------------------------------------
# Bindings and registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToolBinding:
    descriptor: ToolDescriptor
    binding: str
    timeout_s: float | None = None  # None -> DEFAULT_TIMEOUT_S


def _command_template_runner(template: str) -> Runner:
    def run(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
        quoted = {k: shlex.quote(str(v)) for k, v in args.items()}
        try:
            cmd = template.format(**quoted)
        except KeyError as exc:
            raise ToolFailure(f"template-missing-argument: {exc.args[0]}") from None
        return _run_shell(cmd, ctx, ctx.confine("."), timeout_s)

    return run


def _python_callable_runner(fn: Callable) -> Runner:
    def run(args: dict, ctx: ToolContext, timeout_s: float) -> dict:
        result = fn(**args)
        return result if isinstance(result, dict) else {"result": result}

    return run


def resolve_binding(binding: str) -> Runner:
    """Built-in name, `cmd:` template, or dotted import path (last-segment
    fallback to a built-in keeps config fixtures portable across hosts)."""
    if binding.startswith("cmd:"):
        template = binding[len("cmd:"):].strip()
        if not template:
            raise UnresolvableBinding("empty command template")
        return _command_template_runner(template)
    if binding in BUILTIN_RUNNERS:
        return BUILTIN_RUNNERS[binding]
    if "." in binding:
        module_name, _, attr = binding.rpartition(".")
        try:
            target = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError):
            if attr in BUILTIN_RUNNERS:
                return BUILTIN_RUNNERS[attr]
            raise UnresolvableBinding(binding) from None
        if not callable(target):
            raise UnresolvableBinding(f"{binding} is not callable")
        return _python_callable_runner(target)
    raise UnresolvableBinding(binding)


@dataclass
class _RegisteredTool:
    descriptor: ToolDescriptor
    runner: Runner
    timeout_s: float


class ToolRegistry:
    """Name -> executable tool. Populated at config load, then read-only."""

    def __init__(self) -> None:
        self._tools: dict[str, _RegisteredTool] = {}

    def register(self, binding: ToolBinding) -> None:
        name = binding.descriptor.name
        if name in self._tools:
            raise DuplicateTool(name)
        runner = resolve_binding(binding.binding)
        timeout = binding.timeout_s if binding.timeout_s is not None else DEFAULT_TIMEOUT_S
        self._tools[name] = _RegisteredTool(binding.descriptor, runner, timeout)

    def names(self) -> list[str]:
        return list(self._tools)

    def descriptor(self, name: str) -> ToolDescriptor:
        return self._tools[name].descriptor

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def invoke(self, call: ToolCall, workdir: str | Path) -> ToolResult:
        """Execute a tool call; every failure is an error-status result."""
        started = time.monotonic()

        def done(status: str, payload: dict) -> ToolResult:
            return ToolResult(status, payload, duration=time.monotonic() - started)

        tool = self._tools.get(call.tool_name)
        if tool is None:
            return done("error", {"error": "tool-not-registered", "tool": call.tool_name})
        violations = validate_args(tool.descriptor, call.arguments)
        if violations:
            return done("error", {"error": "invalid-arguments", "violations": violations})
        ctx = ToolContext(Path(workdir))
        try:
            return done("ok", tool.runner(call.arguments, ctx, tool.timeout_s))
        except ToolFailure as exc:
            return done("error", {"error": "tool-failure", "message": str(exc)})
        except subprocess.TimeoutExpired as exc:
            return done("error", {"error": "timeout", "timeout_s": exc.timeout})
        except Exception as exc:  # noqa: BLE001 - loop must survive any tool bug
            log.exception("tool %s crashed", call.tool_name)
            return done("error", {"error": "tool-crash", "message": f"{type(exc).__name__}: {exc}"})
