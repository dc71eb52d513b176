"""Hierarchy construction, validation, levels, and rendering."""
from __future__ import annotations

import random
from collections import deque
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nexus.hierarchy import (
    AgentKind,
    AgentSpec,
    DuplicateName,
    HierarchyGraph,
    InvalidSpec,
    KindConstraintViolation,
    MissingParent,
    SecondRoot,
    UnknownAgent,
    add_agent,
    children,
    descendants,
    empty_graph,
    level,
    parse_rendered,
    render_graph,
    root_of,
    validate,
    with_comm_edge,
)


# ---------------------------------------------------------------------------
# Oracle: breadth-first distance from the root over the child adjacency,
# computed without touching level() or the parent-walk logic.
# ---------------------------------------------------------------------------

def bfs_distances(graph: HierarchyGraph) -> dict[str, int]:
    child_map: dict[str, list[str]] = {}
    for child_id, parent_id in graph.parent.items():
        child_map.setdefault(parent_id, []).append(child_id)
    root = next(a for a, s in graph.nodes.items() if s.kind is AgentKind.ROOT_SUPERVISOR)
    dist = {root: 0}
    queue = deque([root])
    while queue:
        current = queue.popleft()
        for child in child_map.get(current, []):
            if child not in dist:
                dist[child] = dist[current] + 1
                queue.append(child)
    return dist


def spec(name: str, kind: AgentKind) -> AgentSpec:
    return AgentSpec(id=name, name=name, kind=kind)


def coordinator_graph() -> HierarchyGraph:
    """Root plus two workers, the smallest realistic shape."""
    g = add_agent(empty_graph(), spec("ProgrammingTaskCoordinator", AgentKind.ROOT_SUPERVISOR))
    g = add_agent(g, spec("CodeAnalyzer", AgentKind.WORKER), "ProgrammingTaskCoordinator")
    g = add_agent(g, spec("CodeRefactorer", AgentKind.WORKER), "ProgrammingTaskCoordinator")
    return g


def three_level_graph() -> HierarchyGraph:
    """Root, one task supervisor, workers at levels 1 and 2."""
    g = add_agent(empty_graph(), spec("Root", AgentKind.ROOT_SUPERVISOR))
    g = add_agent(g, spec("Planner", AgentKind.TASK_SUPERVISOR), "Root")
    g = add_agent(g, spec("Scout", AgentKind.WORKER), "Root")
    g = add_agent(g, spec("Digger", AgentKind.WORKER), "Planner")
    g = add_agent(g, spec("Hauler", AgentKind.WORKER), "Planner")
    return g


def random_valid_graph(rng: random.Random, max_nodes: int = 50) -> HierarchyGraph:
    """Random build sequence using only add_agent; always legal by construction."""
    g = add_agent(empty_graph(), spec("n0", AgentKind.ROOT_SUPERVISOR))
    supervisors = ["n0"]  # ids that may accept task supervisors (root only)
    worker_parents = ["n0"]
    for i in range(1, rng.randint(1, max_nodes)):
        name = f"n{i}"
        if rng.random() < 0.25:
            g = add_agent(g, spec(name, AgentKind.TASK_SUPERVISOR), "n0")
            worker_parents.append(name)
        else:
            g = add_agent(g, spec(name, AgentKind.WORKER), rng.choice(worker_parents))
    assert supervisors  # root always present
    return g


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def test_coordinator_graph_builds_and_validates():
    g = coordinator_graph()
    assert validate(g) == []
    assert root_of(g) == "ProgrammingTaskCoordinator"
    assert children(g, "ProgrammingTaskCoordinator") == ["CodeAnalyzer", "CodeRefactorer"]


def test_add_worker_under_worker_rejected():
    g = coordinator_graph()
    with pytest.raises(KindConstraintViolation):
        add_agent(g, spec("Helper", AgentKind.WORKER), "CodeAnalyzer")


def test_add_task_supervisor_under_task_supervisor_rejected():
    g = three_level_graph()
    with pytest.raises(KindConstraintViolation):
        add_agent(g, spec("SubPlanner", AgentKind.TASK_SUPERVISOR), "Planner")


def test_task_supervisor_under_worker_rejected():
    g = coordinator_graph()
    with pytest.raises(KindConstraintViolation):
        add_agent(g, spec("SubPlanner", AgentKind.TASK_SUPERVISOR), "CodeAnalyzer")


def test_second_root_rejected():
    g = coordinator_graph()
    with pytest.raises(SecondRoot):
        add_agent(g, spec("Root2", AgentKind.ROOT_SUPERVISOR))


def test_duplicate_name_rejected():
    g = coordinator_graph()
    with pytest.raises(DuplicateName):
        add_agent(g, spec("CodeAnalyzer", AgentKind.WORKER), "ProgrammingTaskCoordinator")


def test_missing_parent_rejected():
    g = coordinator_graph()
    with pytest.raises(MissingParent):
        add_agent(g, spec("Orphan", AgentKind.WORKER), "NoSuchAgent")
    with pytest.raises(MissingParent):
        add_agent(g, spec("Orphan", AgentKind.WORKER), None)


def test_root_with_parent_rejected():
    g = coordinator_graph()
    with pytest.raises(KindConstraintViolation):
        add_agent(g, spec("Root2", AgentKind.ROOT_SUPERVISOR), "ProgrammingTaskCoordinator")


def test_add_agent_returns_new_graph():
    g1 = coordinator_graph()
    g2 = add_agent(g1, spec("Extra", AgentKind.WORKER), "ProgrammingTaskCoordinator")
    assert "Extra" not in g1.nodes
    assert "Extra" in g2.nodes


def test_agent_spec_rejects_bad_names():
    with pytest.raises(InvalidSpec):
        AgentSpec(id="x", name="", kind=AgentKind.WORKER)
    with pytest.raises(InvalidSpec):
        AgentSpec(id="x", name=" padded ", kind=AgentKind.WORKER)
    with pytest.raises(InvalidSpec):
        AgentSpec(id="x", name="two\nlines", kind=AgentKind.WORKER)


# ---------------------------------------------------------------------------
# Validation of injected violations
# ---------------------------------------------------------------------------

def rules_of(graph: HierarchyGraph) -> set[str]:
    return {v.rule for v in validate(graph)}


def test_validate_clean_graph_is_ok():
    assert validate(three_level_graph()) == []


def test_validate_detects_second_root():
    g = three_level_graph()
    g.nodes["Intruder"] = spec("Intruder", AgentKind.ROOT_SUPERVISOR)
    assert "multiple-roots" in rules_of(g)


def test_validate_detects_parent_cycle():
    g = three_level_graph()
    # Two workers pointing at each other, detached from the root path.
    g.parent["Digger"] = "Hauler"
    g.parent["Hauler"] = "Digger"
    assert "unreachable-from-root" in rules_of(g)


def test_validate_detects_kind_violation():
    g = three_level_graph()
    g.parent["Planner"] = "Scout"  # task supervisor under a worker
    assert "kind-constraint" in rules_of(g)


def test_validate_detects_worker_under_worker():
    g = three_level_graph()
    g.parent["Digger"] = "Scout"
    assert "kind-constraint" in rules_of(g)


def test_validate_detects_duplicate_name():
    g = three_level_graph()
    g.nodes["Digger"] = replace(g.nodes["Digger"], name="Scout")
    assert "duplicate-name" in rules_of(g)


def test_validate_detects_orphan():
    g = three_level_graph()
    del g.parent["Digger"]
    found = rules_of(g)
    assert "missing-parent" in found and "unreachable-from-root" in found


def test_validate_detects_unknown_parent():
    g = three_level_graph()
    g.parent["Digger"] = "Ghost"
    assert "unknown-parent" in rules_of(g)


def test_validate_detects_rootless_graph():
    g = three_level_graph()
    g.nodes["Root"] = replace(g.nodes["Root"], kind=AgentKind.TASK_SUPERVISOR)
    assert "no-root" in rules_of(g)


def test_violations_name_offending_node():
    g = three_level_graph()
    g.parent["Planner"] = "Scout"
    offenders = [v.agent_id for v in validate(g) if v.rule == "kind-constraint"]
    assert offenders == ["Planner"]


# ---------------------------------------------------------------------------
# Levels and children
# ---------------------------------------------------------------------------

def test_levels_on_fixtures():
    g = coordinator_graph()
    assert level(g, "ProgrammingTaskCoordinator") == 0
    assert level(g, "CodeAnalyzer") == 1
    g3 = three_level_graph()
    assert level(g3, "Digger") == 2


def test_level_unknown_agent():
    with pytest.raises(UnknownAgent):
        level(coordinator_graph(), "Nobody")
    with pytest.raises(UnknownAgent):
        children(coordinator_graph(), "Nobody")


def test_children_of_worker_empty():
    assert children(coordinator_graph(), "CodeAnalyzer") == []


def test_descendants_of_task_supervisor():
    g = three_level_graph()
    assert descendants(g, "Planner") == ["Digger", "Hauler"]
    assert descendants(g, "Root") == ["Planner", "Digger", "Hauler", "Scout"]


def test_comm_edges_stored_and_checked():
    g = three_level_graph()
    g = with_comm_edge(g, "Scout", "Digger")
    assert ("Scout", "Digger") in g.comm_edges
    assert validate(g) == []
    with pytest.raises(KindConstraintViolation):
        with_comm_edge(g, "Scout", "Scout")
    with pytest.raises(UnknownAgent):
        with_comm_edge(g, "Scout", "Ghost")


def test_injected_comm_self_edge_flagged():
    g = three_level_graph()
    g = replace(g, comm_edges=(("Scout", "Scout"),))
    assert "comm-self-edge" in rules_of(g)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_closure_random_builds_always_validate(seed: int):
    g = random_valid_graph(random.Random(seed))
    assert validate(g) == []


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_level_matches_bfs_oracle(seed: int):
    g = random_valid_graph(random.Random(seed))
    oracle = bfs_distances(g)
    assert set(oracle) == set(g.nodes)
    for agent_id in g.nodes:
        assert level(g, agent_id) == oracle[agent_id]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_children_parent_duality(seed: int):
    g = random_valid_graph(random.Random(seed))
    for v in g.nodes:
        for u in children(g, v):
            assert g.parent[u] == v
    for u, v in g.parent.items():
        assert u in children(g, v)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_render_parse_round_trip(seed: int):
    g = random_valid_graph(random.Random(seed))
    triples = parse_rendered(render_graph(g))
    assert len(triples) == len(g.nodes)
    by_name = {t[0]: t for t in triples}
    for agent_id, node in g.nodes.items():
        name, depth, parent_name = by_name[node.name]
        assert depth == level(g, agent_id)
        expected_parent = graph_parent_name(g, agent_id)
        assert parent_name == expected_parent


def graph_parent_name(g: HierarchyGraph, agent_id: str) -> str | None:
    parent_id = g.parent.get(agent_id)
    return g.nodes[parent_id].name if parent_id is not None else None


def test_render_three_level_fixture_indentation():
    g = three_level_graph()
    text = render_graph(g)
    assert text.splitlines() == [
        "[SUP] Root",
        "  [TSUP] Planner",
        "    [WRK] Digger",
        "    [WRK] Hauler",
        "  [WRK] Scout",
    ]


def test_render_single_root():
    g = add_agent(empty_graph(), spec("Solo", AgentKind.ROOT_SUPERVISOR))
    assert render_graph(g) == "[SUP] Solo"
