import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridstate.grid import (
    Edge,
    GridError,
    GridTopology,
    Node,
    NodeKind,
    build_constraints,
    build_ordering,
    build_selection,
    customer_scenario,
    load_topology,
    path_grid,
    topology_from_dict,
    topology_to_dict,
)


def two_node(z=0.1 + 0.05j):
    return path_grid([z])


def test_two_node_ordering():
    o = build_ordering(two_node())
    assert o.N == 3
    assert o.node_index["N0"] == 0
    assert o.edge_index["E1"] == 2


def test_two_node_constraint_row():
    z = 0.3 + 0.2j
    topo = two_node(z)
    cs = build_constraints(topo, build_ordering(topo))
    assert cs.C.shape == (1, 3)
    np.testing.assert_allclose(cs.C.toarray(), [[1, -1, -z]])
    assert cs.row_labels == ("drop@E1",)
    assert np.all(cs.c == 0)


def test_three_node_path_has_one_kirchhoff_row():
    topo = path_grid([0.1, 0.2])
    o = build_ordering(topo)
    cs = build_constraints(topo, o)
    assert cs.Q == 3
    assert cs.row_labels[0] == "kirchhoff@N1"
    row = cs.C.toarray()[0]
    assert np.all(row[: o.n] == 0)
    assert row[o.edge_index["E1"]] == 1 and row[o.edge_index["E2"]] == -1


def test_example_grid_rows(grid, ordering):
    cs = build_constraints(grid, ordering)
    junctions = [n.id for n in grid.nodes if n.kind == NodeKind.JUNCTION]
    assert cs.Q == len(junctions) + len(grid.edges)
    assert not any(lbl == f"kirchhoff@{grid.root}" for lbl in cs.row_labels)
    C = cs.C.toarray()
    for lbl, row in zip(cs.row_labels, C):
        if lbl.startswith("kirchhoff"):
            assert np.all(row[: ordering.n] == 0)
        else:
            assert sorted(row[: ordering.n][row[: ordering.n] != 0].real) == [-1.0, 1.0]
            assert np.count_nonzero(row[ordering.n :]) == 1


def test_load_flow_state_satisfies_constraints(grid, ordering, true_state):
    cs = build_constraints(grid, ordering)
    imax = np.max(np.abs(true_state.currents))
    zmax = max(abs(e.impedance) for e in grid.edges)
    assert np.max(np.abs(cs.residual(true_state.x))) <= 10 * 1e-10 * zmax * imax


def test_ordering_is_independent_of_input_order():
    topo = path_grid([0.1, 0.2, 0.3])
    shuffled = GridTopology(tuple(reversed(topo.nodes)), tuple(reversed(topo.edges)))
    a, b = build_ordering(topo), build_ordering(shuffled)
    assert a.node_ids == b.node_ids and a.edge_ids == b.edge_ids


def test_selection_identity_when_everything_measured():
    topo = path_grid([0.1, 0.2])
    o = build_ordering(topo)
    sel = build_selection(o, list(o.node_ids), list(o.edge_ids))
    np.testing.assert_array_equal(sel.D.toarray(), np.eye(o.N))


def test_customer_scenario_size(grid, ordering):
    nodes, edges = customer_scenario(grid)
    sel = build_selection(ordering, nodes, edges)
    customers = sum(n.kind == NodeKind.CUSTOMER for n in grid.nodes)
    assert sel.K == 2 * customers


def test_selection_extracts_named_phasors(ordering, true_state):
    sel = build_selection(ordering, ["SM-70", "JB-42"], ["S-70"])
    got = sel.D @ true_state.x
    np.testing.assert_array_equal(got, [true_state.voltage("SM-70"), true_state.voltage("JB-42"),
                                        true_state.current("S-70")])


def test_selection_errors(ordering):
    with pytest.raises(GridError, match="no measurements"):
        build_selection(ordering, [], [])
    with pytest.raises(GridError):
        build_selection(ordering, ["SM-70", "SM-70"], [])
    with pytest.raises(GridError):
        build_selection(ordering, ["nowhere"], [])


@pytest.mark.parametrize(
    "nodes, edges, msg",
    [
        ([("a", "substation-root"), ("a", "customer-connection")], [], "duplicate"),
        ([("a", "junction-box"), ("b", "customer-connection")], [("e", "a", "b", 1, 0)], "root"),
        ([("a", "substation-root"), ("b", "customer-connection")], [("e", "a", "c", 1, 0)], "unknown"),
        ([("a", "substation-root"), ("b", "customer-connection")], [("e", "a", "b", -1, 0)], "resistance"),
        ([("a", "substation-root"), ("b", "customer-connection"), ("c", "customer-connection")],
         [("e", "a", "b", 1, 0)], "connected"),
    ],
)
def test_topology_validation(nodes, edges, msg):
    with pytest.raises(GridError, match=msg):
        GridTopology(tuple(Node(i, NodeKind(k)) for i, k in nodes),
                     tuple(Edge(i, u, v, complex(r, x)) for i, u, v, r, x in edges))


def test_cycles_are_accepted():
    nodes = (Node("r", NodeKind.ROOT), Node("a", NodeKind.JUNCTION), Node("b", NodeKind.JUNCTION))
    edges = (Edge("e1", "r", "a", 0.1), Edge("e2", "a", "b", 0.1), Edge("e3", "b", "r", 0.1))
    topo = GridTopology(nodes, edges)
    assert not topo.is_tree
    cs = build_constraints(topo, build_ordering(topo))
    assert cs.Q == 2 + 3


def test_json_roundtrip(tmp_path, grid):
    p = tmp_path / "g.json"
    p.write_text(json.dumps(topology_to_dict(grid)))
    again = load_topology(p)
    assert again == grid or (again.nodes == grid.nodes and again.edges == grid.edges)


def test_malformed_grid_dict():
    with pytest.raises(GridError):
        topology_from_dict({"nodes": [{"id": "a"}], "edges": []})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.complex_numbers(min_magnitude=1e-3, max_magnitude=2.0).filter(lambda z: z.real >= 0),
                min_size=1, max_size=6),
       st.floats(0.1, 10.0))
def test_impedance_scaling_only_touches_current_columns(zs, s):
    topo = path_grid(zs)
    o = build_ordering(topo)
    a = build_constraints(topo, o).C.toarray()
    b = build_constraints(topo.with_impedance_scale(s), o).C.toarray()
    np.testing.assert_array_equal(a[:, : o.n], b[:, : o.n])
    drop = np.array([lbl.startswith("drop") for lbl in build_constraints(topo, o).row_labels])
    np.testing.assert_allclose(b[drop][:, o.n :], s * a[drop][:, o.n :], rtol=1e-12)
