"""Tool descriptors, argument validation, wire codec, built-ins, sandboxing."""
from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nexus.toolkit import (
    BUILTIN_DESCRIPTORS,
    DuplicateTool,
    ToolBinding,
    ToolCall,
    ToolDescriptor,
    ToolParameter,
    ToolRegistry,
    ToolkitError,
    UnresolvableBinding,
    builtin_binding,
    descriptor_to_wire,
    validate_args,
    wire_to_descriptor,
)

MATH_TOOL = BUILTIN_DESCRIPTORS["symbolic_math_operations"]
MATH_OPS = ("differentiate", "integrate", "simplify", "solve", "expand", "factor", "limit")


@pytest.fixture
def registry() -> ToolRegistry:
    reg = ToolRegistry()
    for name in ["save_code", "get_code", "run_command", "write_file", "read_file"]:
        reg.register(builtin_binding(name))
    return reg


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

def test_descriptor_name_rules():
    with pytest.raises(ToolkitError):
        ToolDescriptor(name="9starts_with_digit")
    with pytest.raises(ToolkitError):
        ToolDescriptor(name="has-dash")
    ToolDescriptor(name="_ok_name2")


def test_descriptor_rejects_bad_params():
    with pytest.raises(ToolkitError):
        ToolDescriptor("t", parameters={"x": ToolParameter("tensor")})
    with pytest.raises(ToolkitError):
        ToolDescriptor("t", parameters={"x": ToolParameter("string", enum_values=())})
    with pytest.raises(ToolkitError):
        ToolDescriptor("t", parameters={"x": ToolParameter("number", enum_values=("a",))})


def test_math_tool_has_seven_operations():
    param = MATH_TOOL.parameters["operation"]
    assert param.enum_values == MATH_OPS


# ---------------------------------------------------------------------------
# validate_args
# ---------------------------------------------------------------------------

def test_validate_args_accepts_well_formed():
    args = {"operation": "differentiate", "expression": "x**2", "variables": "x"}
    assert validate_args(MATH_TOOL, args) == []


def test_validate_args_enum_mismatch():
    args = {"operation": "transmogrify", "expression": "x"}
    assert "enum-mismatch(operation)" in validate_args(MATH_TOOL, args)


def test_validate_args_missing_required():
    assert "missing-required(expression)" in validate_args(MATH_TOOL, {"operation": "solve"})


def test_validate_args_unknown_param():
    args = {"operation": "solve", "expression": "x", "precision": 8}
    assert "unknown-param(precision)" in validate_args(MATH_TOOL, args)


def test_validate_args_type_mismatch():
    args = {"operation": "solve", "expression": 42}
    assert "type-mismatch(expression)" in validate_args(MATH_TOOL, args)
    rc = BUILTIN_DESCRIPTORS["run_command"]
    assert "type-mismatch(timeout_s)" in validate_args(rc, {"cmd": "ls", "timeout_s": True})
    assert validate_args(rc, {"cmd": "ls", "timeout_s": 1.5}) == []


def test_validate_args_total_on_garbage():
    assert validate_args(MATH_TOOL, None) == ["arguments-not-a-map(NoneType)"]
    assert validate_args(MATH_TOOL, "text") == ["arguments-not-a-map(str)"]


# ---------------------------------------------------------------------------
# Wire codec
# ---------------------------------------------------------------------------

def test_wire_export_shape():
    wire = descriptor_to_wire(MATH_TOOL)
    assert wire["type"] == "function"
    fn = wire["function"]
    assert fn["name"] == "symbolic_math_operations"
    assert list(fn["parameters"]["properties"]) == ["operation", "expression", "variables"]
    assert fn["parameters"]["properties"]["operation"]["enum"] == list(MATH_OPS)
    assert fn["parameters"]["required"] == ["operation", "expression"]


def test_wire_round_trip_on_builtins():
    for descriptor in BUILTIN_DESCRIPTORS.values():
        assert wire_to_descriptor(descriptor_to_wire(descriptor)) == descriptor


def test_wire_empty_params():
    d = ToolDescriptor("ping", "no-arg tool")
    wire = descriptor_to_wire(d)
    assert wire["function"]["parameters"]["properties"] == {}
    assert wire_to_descriptor(wire) == d


names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,10}", fullmatch=True)


@st.composite
def descriptors(draw) -> ToolDescriptor:
    param_names = draw(st.lists(names, unique=True, max_size=4))
    params = {}
    for p in param_names:
        type_tag = draw(st.sampled_from(["string", "number", "boolean"]))
        enum_values = None
        if type_tag == "string" and draw(st.booleans()):
            enum_values = tuple(draw(st.lists(st.text(min_size=1, max_size=6), min_size=1, max_size=4, unique=True)))
        params[p] = ToolParameter(
            type=type_tag,
            description=draw(st.text(max_size=12)),
            enum_values=enum_values,
            required=draw(st.booleans()),
        )
    return ToolDescriptor(draw(names), draw(st.text(max_size=20)), params)


@settings(max_examples=150, deadline=None)
@given(descriptor=descriptors())
def test_wire_round_trip_property(descriptor: ToolDescriptor):
    assert wire_to_descriptor(descriptor_to_wire(descriptor)) == descriptor


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

def test_register_duplicate(registry):
    with pytest.raises(DuplicateTool):
        registry.register(builtin_binding("save_code"))


def test_register_unknown_builtin():
    reg = ToolRegistry()
    with pytest.raises(UnresolvableBinding):
        reg.register(ToolBinding(ToolDescriptor("mystery"), "mystery"))


def test_register_dotted_path_falls_back_to_builtin():
    reg = ToolRegistry()
    reg.register(
        ToolBinding(MATH_TOOL, "examples.mathematics_yaml.task_tools.symbolic_math_operations")
    )
    assert "symbolic_math_operations" in reg


def test_register_dotted_path_importable():
    reg = ToolRegistry()
    descriptor = ToolDescriptor(
        "indenter",
        parameters={"text": ToolParameter("string"), "prefix": ToolParameter("string")},
    )
    reg.register(ToolBinding(descriptor, "textwrap.indent"))
    result = reg.invoke(ToolCall("indenter", {"text": "a\nb\n", "prefix": "> "}), ".")
    assert result.status == "ok" and result.payload["result"] == "> a\n> b\n"


def test_register_unresolvable_dotted_path():
    reg = ToolRegistry()
    with pytest.raises(UnresolvableBinding):
        reg.register(ToolBinding(ToolDescriptor("gone"), "no.such.module.fn"))


# ---------------------------------------------------------------------------
# Invocation and built-ins
# ---------------------------------------------------------------------------

def test_save_then_get_round_trip(registry, tmp_path):
    content = "def f():\n    return 41 + 1\n"
    saved = registry.invoke(ToolCall("save_code", {"name": "sol.py", "content": content}), tmp_path)
    assert saved.status == "ok"
    assert (tmp_path / "files" / "sol.py").read_text() == content
    got = registry.invoke(ToolCall("get_code", {"name": "sol.py"}), tmp_path)
    assert got.status == "ok" and got.payload["content"] == content


def test_save_code_overwrites(registry, tmp_path):
    registry.invoke(ToolCall("save_code", {"name": "a.py", "content": "old"}), tmp_path)
    registry.invoke(ToolCall("save_code", {"name": "a.py", "content": "new"}), tmp_path)
    got = registry.invoke(ToolCall("get_code", {"name": "a.py"}), tmp_path)
    assert got.payload["content"] == "new"


def test_get_code_missing(registry, tmp_path):
    result = registry.invoke(ToolCall("get_code", {"name": "ghost.py"}), tmp_path)
    assert result.status == "error"
    assert "not-found" in result.payload["message"]


def test_run_command_captures_exit_code(registry, tmp_path):
    result = registry.invoke(ToolCall("run_command", {"cmd": "exit 3"}), tmp_path)
    assert result.status == "ok"
    assert result.payload["exit_code"] == 3


def test_run_command_captures_output(registry, tmp_path):
    result = registry.invoke(
        ToolCall("run_command", {"cmd": "echo out; echo err 1>&2"}), tmp_path
    )
    assert result.payload["stdout"] == "out\n"
    assert result.payload["stderr"] == "err\n"
    assert result.payload["stdout_truncated"] is False


def test_run_command_timeout(registry, tmp_path):
    result = registry.invoke(
        ToolCall("run_command", {"cmd": "sleep 5", "timeout_s": 0.2}), tmp_path
    )
    assert result.status == "error"
    assert result.payload["error"] == "timeout"


def test_run_command_truncates_large_output(registry, tmp_path):
    result = registry.invoke(
        ToolCall("run_command", {"cmd": "head -c 100000 /dev/zero | tr '\\0' 'x'"}), tmp_path
    )
    assert result.status == "ok"
    assert len(result.payload["stdout"].encode()) == 64 * 1024
    assert result.payload["stdout_truncated"] is True


def test_run_command_workdir_confined(registry, tmp_path):
    result = registry.invoke(
        ToolCall("run_command", {"cmd": "touch escaped", "workdir": "../outside"}), tmp_path / "sess"
    )
    assert result.status == "error"
    assert "path-escape" in result.payload["message"]


def test_write_outside_session_root_fails(registry, tmp_path):
    session = tmp_path / "sess"
    session.mkdir()
    result = registry.invoke(
        ToolCall("write_file", {"path": "../evil.txt", "content": "x"}), session
    )
    assert result.status == "error"
    assert "path-escape" in result.payload["message"]
    assert not (tmp_path / "evil.txt").exists()
    sneaky = registry.invoke(
        ToolCall("save_code", {"name": "../../evil.py", "content": "x"}), session
    )
    assert sneaky.status == "error"


def test_write_read_file_round_trip(registry, tmp_path):
    registry.invoke(ToolCall("write_file", {"path": "notes/plan.txt", "content": "dig"}), tmp_path)
    result = registry.invoke(ToolCall("read_file", {"path": "notes/plan.txt"}), tmp_path)
    assert result.payload["content"] == "dig"


def test_invoke_unregistered_tool_is_error_result(registry, tmp_path):
    result = registry.invoke(ToolCall("levitate", {}), tmp_path)
    assert result.status == "error"
    assert result.payload["error"] == "tool-not-registered"


def test_invoke_invalid_args_is_error_result(registry, tmp_path):
    result = registry.invoke(ToolCall("save_code", {"name": "x"}), tmp_path)
    assert result.status == "error"
    assert "missing-required(content)" in result.payload["violations"]


def test_command_template_binding(tmp_path):
    reg = ToolRegistry()
    descriptor = ToolDescriptor("shouter", parameters={"text": ToolParameter("string")})
    reg.register(ToolBinding(descriptor, "cmd:printf '%s' {text} | tr a-z A-Z"))
    result = reg.invoke(ToolCall("shouter", {"text": "quiet words"}), tmp_path)
    assert result.status == "ok"
    assert result.payload["stdout"] == "QUIET WORDS"


def test_math_stand_in_is_deterministic(tmp_path):
    reg = ToolRegistry()
    reg.register(builtin_binding("symbolic_math_operations"))
    call = ToolCall("symbolic_math_operations", {"operation": "differentiate", "expression": "x**2"})
    first = reg.invoke(call, tmp_path)
    second = reg.invoke(call, tmp_path)
    assert first.status == "ok"
    assert first.payload == second.payload
