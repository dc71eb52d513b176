"""YAML architecture configs: parse, env substitution, lowering, emission.

The document shape is a single `supervisor:` tree. Nested nodes use the
`type` tokens `supervisor`/`agent`; position decides the runtime kind
(top node -> root supervisor, nested supervisors -> task supervisors,
agents -> workers). Unknown keys are hard errors.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .backend import ModelConfig
from .hierarchy import AgentKind, AgentSpec, HierarchyGraph, add_agent, empty_graph, validate
from .toolkit import ToolBinding, ToolDescriptor, ToolParameter, ToolRegistry

SUBST_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
MAX_DEPTH = 8  # soft cap on supervisor nesting, checked at lowering

NODE_KEYS = {"name", "type", "llm_config", "system_message", "children", "tools"}
LLM_KEYS = {"model", "api_key", "base_url", "temperature", "top_p"}
TOOL_KEYS = {"name", "type", "python_path", "binding", "description", "parameters"}
PARAM_KEYS = {"type", "enum", "description"}


class ConfigError(Exception):
    pass


class YamlSyntax(ConfigError):
    def __init__(self, line: int, reason: str = "invalid YAML"):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class MissingEnvVar(ConfigError):
    def __init__(self, name: str, path: str):
        super().__init__(f"environment variable {name} not set (at {path})")
        self.name = name
        self.path = path


class SchemaViolation(ConfigError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path or '<root>'}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True)
class LlmSettings:
    model: str
    api_key: str = field(repr=False, default="")
    base_url: str = ""
    temperature: float | None = None
    top_p: float | None = None


@dataclass(frozen=True)
class ToolConfig:
    name: str
    type: str
    binding: str
    description: str = ""
    parameters: dict[str, ToolParameter] = field(default_factory=dict)
    binding_key: str = "binding"  # `python_path` or `binding`, preserved for emission


@dataclass(frozen=True)
class NodeConfig:
    name: str
    type: str
    llm_config: LlmSettings
    system_message: str
    children: tuple["NodeConfig", ...] = ()
    tools: tuple[ToolConfig, ...] = ()


@dataclass(frozen=True)
class ArchitectureConfig:
    root: NodeConfig


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _substitute(value: str, env: dict[str, str], path: str) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in env:
            raise MissingEnvVar(name, path)
        return env[name]

    return SUBST_RE.sub(repl, value)


def _expect_map(raw, path: str) -> dict:
    if not isinstance(raw, dict):
        raise SchemaViolation(path, f"expected a mapping, got {type(raw).__name__}")
    return raw


def _check_keys(raw: dict, allowed: set[str], path: str) -> None:
    for key in raw:
        if key not in allowed:
            raise SchemaViolation(f"{path}.{key}" if path else str(key), "unknown key")


def _scalar(raw: dict, key: str, env: dict[str, str], path: str, required: bool = True) -> str | None:
    if key not in raw:
        if required:
            raise SchemaViolation(path, f"missing required key `{key}`")
        return None
    value = raw[key]
    if not isinstance(value, str):
        raise SchemaViolation(f"{path}.{key}", f"expected a string, got {type(value).__name__}")
    return _substitute(value, env, f"{path}.{key}" if path else key)


def _number(raw: dict, key: str, env: dict[str, str], path: str) -> float | None:
    if key not in raw:
        return None
    value = raw[key]
    if isinstance(value, str):
        value = _substitute(value, env, f"{path}.{key}")
        try:
            return float(value)
        except ValueError:
            raise SchemaViolation(f"{path}.{key}", f"not a number: {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{path}.{key}", f"expected a number, got {type(value).__name__}")
    return float(value)


def _parse_llm(raw, env: dict[str, str], path: str) -> LlmSettings:
    raw = _expect_map(raw, path)
    _check_keys(raw, LLM_KEYS, path)
    return LlmSettings(
        model=_scalar(raw, "model", env, path),
        api_key=_scalar(raw, "api_key", env, path),
        base_url=_scalar(raw, "base_url", env, path),
        temperature=_number(raw, "temperature", env, path),
        top_p=_number(raw, "top_p", env, path),
    )


def _parse_parameters(raw, env: dict[str, str], path: str) -> dict[str, ToolParameter]:
    raw = _expect_map(raw, path)
    parameters: dict[str, ToolParameter] = {}
    for param_name, spec in raw.items():
        param_path = f"{path}.{param_name}"
        spec = _expect_map(spec, param_path)
        _check_keys(spec, PARAM_KEYS, param_path)
        type_tag = _scalar(spec, "type", env, param_path)
        if type_tag not in ("string", "number", "boolean"):
            raise SchemaViolation(f"{param_path}.type", f"unknown parameter type {type_tag!r}")
        enum_values = None
        if "enum" in spec:
            enum_raw = spec["enum"]
            if not isinstance(enum_raw, list) or not enum_raw:
                raise SchemaViolation(f"{param_path}.enum", "expected a non-empty list")
            enum_values = tuple(
                _substitute(v, env, f"{param_path}.enum") if isinstance(v, str) else v
                for v in enum_raw
            )
        parameters[param_name] = ToolParameter(
            type=type_tag,
            description=_scalar(spec, "description", env, param_path, required=False) or "",
            enum_values=enum_values,
        )
    return parameters


def _parse_tool(raw, env: dict[str, str], path: str) -> ToolConfig:
    raw = _expect_map(raw, path)
    _check_keys(raw, TOOL_KEYS, path)
    type_tag = _scalar(raw, "type", env, path)
    if type_tag != "function":
        raise SchemaViolation(f"{path}.type", f"expected `function`, got {type_tag!r}")
    if "python_path" in raw and "binding" in raw:
        raise SchemaViolation(path, "use either `python_path` or `binding`, not both")
    binding_key = "python_path" if "python_path" in raw else "binding"
    binding = _scalar(raw, binding_key, env, path, required=False)
    if binding is None:
        raise SchemaViolation(path, "missing tool binding (`python_path` or `binding`)")
    return ToolConfig(
        name=_scalar(raw, "name", env, path),
        type=type_tag,
        binding=binding,
        description=_scalar(raw, "description", env, path, required=False) or "",
        parameters=_parse_parameters(raw.get("parameters") or {}, env, f"{path}.parameters"),
        binding_key=binding_key,
    )


def _parse_node(raw, env: dict[str, str], path: str, top_level: bool) -> NodeConfig:
    raw = _expect_map(raw, path)
    _check_keys(raw, NODE_KEYS, path)
    type_tag = _scalar(raw, "type", env, path)
    if type_tag not in ("supervisor", "agent"):
        raise SchemaViolation(f"{path}.type", f"unknown node type {type_tag!r}")
    if top_level and type_tag != "supervisor":
        raise SchemaViolation(f"{path}.type", "top-level node must have type `supervisor`")
    if type_tag == "agent" and "children" in raw:
        raise SchemaViolation(f"{path}.children", "agent nodes cannot have children")
    if type_tag == "supervisor" and "tools" in raw:
        raise SchemaViolation(f"{path}.tools", "supervisor nodes cannot declare tools")

    children: list[NodeConfig] = []
    if "children" in raw:
        raw_children = raw["children"]
        if raw_children is None:
            raw_children = []
        if not isinstance(raw_children, list):
            raise SchemaViolation(f"{path}.children", "expected a list")
        for i, child in enumerate(raw_children):
            children.append(_parse_node(child, env, f"{path}.children[{i}]", top_level=False))

    tools: list[ToolConfig] = []
    if "tools" in raw:
        raw_tools = raw["tools"]
        if raw_tools is None:
            raw_tools = []
        if not isinstance(raw_tools, list):
            raise SchemaViolation(f"{path}.tools", "expected a list")
        for i, tool in enumerate(raw_tools):
            tools.append(_parse_tool(tool, env, f"{path}.tools[{i}]"))

    return NodeConfig(
        name=_scalar(raw, "name", env, path),
        type=type_tag,
        llm_config=_parse_llm(raw.get("llm_config"), env, f"{path}.llm_config"),
        system_message=_scalar(raw, "system_message", env, path),
        children=tuple(children),
        tools=tuple(tools),
    )


def parse_config(yaml_text: str, env: dict[str, str] | None = None) -> ArchitectureConfig:
    env = env or {}
    try:
        raw = yaml.safe_load(yaml_text)
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", 0) + 1
        raise YamlSyntax(line, getattr(exc, "problem", None) or "invalid YAML") from None
    raw = _expect_map(raw, "")
    _check_keys(raw, {"supervisor"}, "")
    if "supervisor" not in raw:
        raise SchemaViolation("", "missing top-level `supervisor` key")
    root = _parse_node(raw["supervisor"], env, "supervisor", top_level=True)
    _check_unique_names(root)
    return ArchitectureConfig(root=root)


def _check_unique_names(root: NodeConfig) -> None:
    seen: set[str] = set()

    def walk(node: NodeConfig, path: str) -> None:
        if node.name in seen:
            raise SchemaViolation(f"{path}.name", f"duplicate agent name {node.name!r}")
        seen.add(node.name)
        for i, child in enumerate(node.children):
            walk(child, f"{path}.children[{i}]")

    walk(root, "supervisor")


def load_config(path: str | Path, env: dict[str, str] | None = None) -> ArchitectureConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), env)


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------

def lower(
    config: ArchitectureConfig,
) -> tuple[HierarchyGraph, ToolRegistry, dict[str, ModelConfig]]:
    """Build the runtime graph, tool registry, and per-agent model configs.

    Agent ids are the (unique) node names. Graph and tool errors are
    re-raised with the YAML path prepended.
    """
    graph = empty_graph()
    registry = ToolRegistry()
    models: dict[str, ModelConfig] = {}
    registered: dict[str, tuple[ToolDescriptor, str]] = {}

    def walk(node: NodeConfig, parent_id: str | None, path: str, depth: int) -> HierarchyGraph:
        nonlocal graph
        if depth > MAX_DEPTH:
            raise SchemaViolation(path, f"nesting depth exceeds soft cap {MAX_DEPTH}")
        if parent_id is None:
            kind = AgentKind.ROOT_SUPERVISOR
        elif node.type == "supervisor":
            kind = AgentKind.TASK_SUPERVISOR
        else:
            kind = AgentKind.WORKER
        spec = AgentSpec(
            id=node.name,
            name=node.name,
            kind=kind,
            system_message=node.system_message,
            model_ref=node.name,
            tool_refs=tuple(tool.name for tool in node.tools),
        )
        try:
            graph = add_agent(graph, spec, parent_id)
        except Exception as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        models[node.name] = _model_config(node.llm_config)
        for i, tool in enumerate(node.tools):
            tool_path = f"{path}.tools[{i}]"
            try:
                descriptor = ToolDescriptor(tool.name, tool.description, tool.parameters)
            except Exception as exc:
                raise type(exc)(f"{tool_path}: {exc}") from exc
            # Agents may share a tool; identical declarations collapse to one
            # registration, conflicting ones are real duplicates.
            if tool.name in registered:
                if registered[tool.name] != (descriptor, tool.binding):
                    raise SchemaViolation(
                        tool_path, f"tool {tool.name!r} redeclared with a different shape"
                    )
                continue
            try:
                registry.register(ToolBinding(descriptor, tool.binding))
            except Exception as exc:
                raise type(exc)(f"{tool_path}: {exc}") from exc
            registered[tool.name] = (descriptor, tool.binding)
        for i, child in enumerate(node.children):
            walk(child, node.name, f"{path}.children[{i}]", depth + 1)
        return graph

    graph = walk(config.root, None, "supervisor", 0)
    violations = validate(graph)
    if violations:  # unreachable via parse, kept as a guard for hand-built configs
        raise SchemaViolation("supervisor", "; ".join(str(v) for v in violations))
    return graph, registry, models


def _model_config(settings: LlmSettings) -> ModelConfig:
    kwargs = {}
    if settings.temperature is not None:
        kwargs["temperature"] = settings.temperature
    if settings.top_p is not None:
        kwargs["top_p"] = settings.top_p
    return ModelConfig(
        model=settings.model, api_key=settings.api_key, base_url=settings.base_url, **kwargs
    )


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _emit_tool(tool: ToolConfig) -> dict:
    out: dict = {"name": tool.name, "type": tool.type, tool.binding_key: tool.binding}
    if tool.description:
        out["description"] = tool.description
    if tool.parameters:
        params: dict = {}
        for param_name, param in tool.parameters.items():
            spec: dict = {"type": param.type}
            if param.enum_values is not None:
                spec["enum"] = list(param.enum_values)
            if param.description:
                spec["description"] = param.description
            params[param_name] = spec
        out["parameters"] = params
    return out


def _emit_node(node: NodeConfig) -> dict:
    llm: dict = {
        "model": node.llm_config.model,
        "api_key": node.llm_config.api_key,
        "base_url": node.llm_config.base_url,
    }
    if node.llm_config.temperature is not None:
        llm["temperature"] = node.llm_config.temperature
    if node.llm_config.top_p is not None:
        llm["top_p"] = node.llm_config.top_p
    out: dict = {
        "name": node.name,
        "type": node.type,
        "llm_config": llm,
        "system_message": node.system_message,
    }
    if node.tools:
        out["tools"] = [_emit_tool(t) for t in node.tools]
    if node.children:
        out["children"] = [_emit_node(c) for c in node.children]
    return out


def emit_config(config: ArchitectureConfig) -> str:
    # allow_unicode stays off: YAML 1.1 line breaks (NEL, U+2028/U+2029) must
    # be escaped or they fold to spaces on re-parse
    return yaml.safe_dump({"supervisor": _emit_node(config.root)}, sort_keys=False, width=100000)


# ---------------------------------------------------------------------------
# Shipped reference architectures
# ---------------------------------------------------------------------------

def architecture_path(name: str) -> Path:
    """Path of a packaged reference architecture (`coding`, `math`, `eda`)."""
    base = resources.files("nexus.architectures")
    candidate = base / f"{name}.yaml"
    if not candidate.is_file():
        known = sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".yaml"))
        raise ConfigError(f"unknown architecture {name!r}; shipped: {', '.join(known)}")
    return Path(str(candidate))


def cassette_path(name: str) -> Path:
    base = resources.files("nexus.architectures") / "cassettes"
    candidate = base / f"{name}.yaml"
    if not candidate.is_file():
        raise ConfigError(f"no packaged cassette named {name!r}")
    return Path(str(candidate))
