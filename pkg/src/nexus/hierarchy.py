"""Rooted agent hierarchy: kinds, parent/level functions, structural validation.

The graph is a rooted tree with one root supervisor, optional task
supervisors directly beneath it, and workers beneath either. Extra
communication edges are stored verbatim but carry no routing semantics.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum


class AgentKind(Enum):
    ROOT_SUPERVISOR = "root_supervisor"
    TASK_SUPERVISOR = "task_supervisor"
    WORKER = "worker"


# Tags used by render_graph, one per kind.
KIND_TAGS = {
    AgentKind.ROOT_SUPERVISOR: "SUP",
    AgentKind.TASK_SUPERVISOR: "TSUP",
    AgentKind.WORKER: "WRK",
}
_TAG_KINDS = {tag: kind for kind, tag in KIND_TAGS.items()}


class HierarchyError(Exception):
    """Base class for all hierarchy construction and lookup errors."""


class DuplicateName(HierarchyError):
    pass


class MissingParent(HierarchyError):
    pass


class KindConstraintViolation(HierarchyError):
    pass


class SecondRoot(HierarchyError):
    pass


class UnknownAgent(HierarchyError):
    pass


class InvalidSpec(HierarchyError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    id: str
    name: str
    kind: AgentKind
    system_message: str = ""
    model_ref: str | None = None
    tool_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidSpec("agent id must be non-empty")
        # Names land in rendered trees and log lines; keep them single-line.
        if not self.name or self.name != self.name.strip() or "\n" in self.name:
            raise InvalidSpec(f"agent name must be a non-empty single line: {self.name!r}")


@dataclass(frozen=True)
class Violation:
    rule: str
    agent_id: str
    detail: str = ""

    def __str__(self) -> str:
        suffix = f": {self.detail}" if self.detail else ""
        return f"{self.rule} [{self.agent_id}]{suffix}"


@dataclass(frozen=True)
class HierarchyGraph:
    """Immutable agent tree. Build with add_agent; never mutate fields."""

    nodes: dict[str, AgentSpec] = field(default_factory=dict)
    parent: dict[str, str] = field(default_factory=dict)
    comm_edges: tuple[tuple[str, str], ...] = ()


def empty_graph() -> HierarchyGraph:
    return HierarchyGraph()


def root_of(graph: HierarchyGraph) -> str:
    for agent_id, spec in graph.nodes.items():
        if spec.kind is AgentKind.ROOT_SUPERVISOR:
            return agent_id
    raise HierarchyError("graph has no root supervisor")


def add_agent(graph: HierarchyGraph, spec: AgentSpec, parent_id: str | None = None) -> HierarchyGraph:
    """Return a new graph with spec attached under parent_id.

    parent_id must be omitted exactly for the root supervisor. Kind rules:
    task supervisors hang directly under the root, workers under either
    supervisor kind.
    """
    if spec.id in graph.nodes:
        raise DuplicateName(f"agent id already registered: {spec.id}")
    for other in graph.nodes.values():
        if other.name == spec.name:
            raise DuplicateName(f"agent name already registered: {spec.name}")

    if spec.kind is AgentKind.ROOT_SUPERVISOR:
        if parent_id is not None:
            raise KindConstraintViolation("root supervisor cannot have a parent")
        if any(n.kind is AgentKind.ROOT_SUPERVISOR for n in graph.nodes.values()):
            raise SecondRoot("graph already has a root supervisor")
        new_parent = dict(graph.parent)
    else:
        if parent_id is None:
            raise MissingParent(f"non-root agent {spec.name} needs a parent")
        parent_spec = graph.nodes.get(parent_id)
        if parent_spec is None:
            raise MissingParent(f"parent not in graph: {parent_id}")
        _check_kind_rule(spec.kind, parent_spec.kind, spec.name)
        new_parent = dict(graph.parent)
        new_parent[spec.id] = parent_id

    new_nodes = dict(graph.nodes)
    new_nodes[spec.id] = spec
    return replace(graph, nodes=new_nodes, parent=new_parent)


def _check_kind_rule(kind: AgentKind, parent_kind: AgentKind, name: str) -> None:
    if kind is AgentKind.TASK_SUPERVISOR and parent_kind is not AgentKind.ROOT_SUPERVISOR:
        raise KindConstraintViolation(
            f"task supervisor {name} must sit directly under the root supervisor"
        )
    if kind is AgentKind.WORKER and parent_kind is AgentKind.WORKER:
        raise KindConstraintViolation(f"worker {name} cannot be parented to a worker")


def with_comm_edge(graph: HierarchyGraph, src: str, dst: str) -> HierarchyGraph:
    """Record a non-hierarchical edge. Stored only; the engine ignores these."""
    if src not in graph.nodes or dst not in graph.nodes:
        raise UnknownAgent(f"comm edge endpoint not in graph: {src!r} -> {dst!r}")
    if src == dst:
        raise KindConstraintViolation("comm edge cannot connect a node to itself")
    return replace(graph, comm_edges=graph.comm_edges + ((src, dst),))


def validate(graph: HierarchyGraph) -> list[Violation]:
    """Check every structural invariant; empty list means the graph is valid."""
    violations: list[Violation] = []

    roots = [a for a, s in graph.nodes.items() if s.kind is AgentKind.ROOT_SUPERVISOR]
    if not roots and graph.nodes:
        violations.append(Violation("no-root", "", "no root supervisor present"))
    for extra in roots[1:]:
        violations.append(Violation("multiple-roots", extra, "more than one root supervisor"))

    seen_names: dict[str, str] = {}
    for agent_id, spec in graph.nodes.items():
        if spec.name in seen_names:
            violations.append(
                Violation("duplicate-name", agent_id, f"name also used by {seen_names[spec.name]}")
            )
        else:
            seen_names[spec.name] = agent_id

    for agent_id, spec in graph.nodes.items():
        parent_id = graph.parent.get(agent_id)
        if spec.kind is AgentKind.ROOT_SUPERVISOR:
            if parent_id is not None:
                violations.append(Violation("root-has-parent", agent_id))
            continue
        if parent_id is None:
            violations.append(Violation("missing-parent", agent_id))
            continue
        parent_spec = graph.nodes.get(parent_id)
        if parent_spec is None:
            violations.append(Violation("unknown-parent", agent_id, f"parent {parent_id} not in graph"))
            continue
        if spec.kind is AgentKind.TASK_SUPERVISOR and parent_spec.kind is not AgentKind.ROOT_SUPERVISOR:
            violations.append(
                Violation("kind-constraint", agent_id, "task supervisor not directly under root")
            )
        if spec.kind is AgentKind.WORKER and parent_spec.kind is AgentKind.WORKER:
            violations.append(Violation("kind-constraint", agent_id, "worker parented to a worker"))

    # Reachability: every node must sit on a unique parent chain back to a root.
    if roots:
        reachable = set(roots[:1])
        frontier = list(roots[:1])
        child_map: dict[str, list[str]] = {}
        for child, parent_id in graph.parent.items():
            child_map.setdefault(parent_id, []).append(child)
        while frontier:
            current = frontier.pop()
            for child in child_map.get(current, []):
                if child not in reachable:
                    reachable.add(child)
                    frontier.append(child)
        for agent_id in graph.nodes:
            if agent_id not in reachable and graph.nodes[agent_id].kind is not AgentKind.ROOT_SUPERVISOR:
                violations.append(Violation("unreachable-from-root", agent_id))

    for src, dst in graph.comm_edges:
        if src == dst:
            violations.append(Violation("comm-self-edge", src))
        if src not in graph.nodes or dst not in graph.nodes:
            violations.append(Violation("comm-unknown-endpoint", src, f"{src} -> {dst}"))

    return violations


def level(graph: HierarchyGraph, agent_id: str) -> int:
    """Edge distance from the root, following parent pointers."""
    if agent_id not in graph.nodes:
        raise UnknownAgent(agent_id)
    depth = 0
    current = agent_id
    seen = {current}
    while current in graph.parent:
        current = graph.parent[current]
        if current in seen:
            raise HierarchyError(f"parent cycle through {current}")
        seen.add(current)
        depth += 1
    return depth


def children(graph: HierarchyGraph, agent_id: str) -> list[str]:
    """Direct children in registration order."""
    if agent_id not in graph.nodes:
        raise UnknownAgent(agent_id)
    return [child for child in graph.nodes if graph.parent.get(child) == agent_id]


def descendants(graph: HierarchyGraph, agent_id: str) -> list[str]:
    """All nodes strictly below agent_id, preorder, registration order."""
    out: list[str] = []
    stack = list(reversed(children(graph, agent_id)))
    while stack:
        current = stack.pop()
        out.append(current)
        stack.extend(reversed(children(graph, current)))
    return out


def render_graph(graph: HierarchyGraph) -> str:
    """Indented tree, one `[TAG] name` line per agent, two spaces per level."""
    root = root_of(graph)
    lines: list[str] = []

    def walk(agent_id: str, depth: int) -> None:
        spec = graph.nodes[agent_id]
        lines.append("  " * depth + f"[{KIND_TAGS[spec.kind]}] {spec.name}")
        for child in children(graph, agent_id):
            walk(child, depth + 1)

    walk(root, 0)
    return "\n".join(lines)


def parse_rendered(text: str) -> list[tuple[str, int, str | None]]:
    """Inverse of render_graph: (name, level, parent name) per line.

    Used by tests and by the console to rebuild the tree from the wire text.
    """
    triples: list[tuple[str, int, str | None]] = []
    stack: list[str] = []  # names along the current root path
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.lstrip(" ")
        indent = len(line) - len(stripped)
        if indent % 2 != 0:
            raise ValueError(f"line {line_no}: odd indentation")
        depth = indent // 2
        if not stripped.startswith("[") or "] " not in stripped:
            raise ValueError(f"line {line_no}: expected `[TAG] name`")
        tag, _, name = stripped.partition("] ")
        if tag[1:] not in _TAG_KINDS:
            raise ValueError(f"line {line_no}: unknown kind tag {tag[1:]!r}")
        if depth > len(stack):
            raise ValueError(f"line {line_no}: indentation jumps a level")
        del stack[depth:]
        parent_name = stack[-1] if stack else None
        triples.append((name, depth, parent_name))
        stack.append(name)
    return triples
