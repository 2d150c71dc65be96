"""Grid graph, state-vector ordering and the linear grid equations.

The state vector holds one voltage phasor per node followed by one current
phasor per edge. Edge currents are oriented from the end closer to the
substation root towards the leaves.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Raised for invalid topologies or references to unknown ids."""


class NodeKind(str, Enum):
    ROOT = "substation-root"
    JUNCTION = "junction-box"
    CUSTOMER = "customer-connection"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    impedance: complex


@dataclass(frozen=True)
class GridTopology:
    """Single-phase equivalent grid.

    Edges as given need not point away from the root; :func:`build_constraints`
    re-orients them along a spanning tree rooted at the substation.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    nominal_voltage: float = 400.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        node_ids = [n.id for n in self.nodes]
        if len(set(node_ids)) != len(node_ids):
            raise GridError("duplicate node ids")
        edge_ids = [e.id for e in self.edges]
        if len(set(edge_ids)) != len(edge_ids):
            raise GridError("duplicate edge ids")
        roots = [n for n in self.nodes if n.kind == NodeKind.ROOT]
        if len(roots) != 1:
            raise GridError(f"expected exactly one substation-root node, got {len(roots)}")
        known = set(node_ids)
        for e in self.edges:
            if e.from_node not in known or e.to_node not in known:
                raise GridError(f"edge {e.id!r} references an unknown node")
            if e.from_node == e.to_node:
                raise GridError(f"edge {e.id!r} is a self loop")
            if complex(e.impedance).real < 0:
                raise GridError(f"edge {e.id!r} has negative resistance")
        if self.nominal_voltage <= 0:
            raise GridError("nominal voltage must be positive")
        if len(self._reachable()) != len(self.nodes):
            raise GridError("grid graph is not connected")

    @property
    def root(self) -> str:
        return next(n.id for n in self.nodes if n.kind == NodeKind.ROOT)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GridError(f"unknown node {node_id!r}")

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise GridError(f"unknown edge {edge_id!r}")

    def adjacency(self) -> dict[str, list[Edge]]:
        adj: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            adj[e.from_node].append(e)
            adj[e.to_node].append(e)
        return adj

    def _reachable(self) -> set[str]:
        adj = self.adjacency()
        seen = {self.root}
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for e in adj[u]:
                v = e.to_node if e.from_node == u else e.from_node
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen

    def oriented_edges(self) -> dict[str, tuple[str, str]]:
        """Map edge id -> (upstream, downstream) node ids.

        Tree edges point away from the root (breadth-first discovery order).
        Edges closing a cycle keep the orientation given in the input.
        """
        return dict(self._orientation)

    @cached_property
    def _orientation(self) -> dict[str, tuple[str, str]]:
        adj = self.adjacency()
        out: dict[str, tuple[str, str]] = {}
        seen = {self.root}
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for e in sorted(adj[u], key=lambda e: e.id):
                if e.id in out:
                    continue
                v = e.to_node if e.from_node == u else e.from_node
                if v in seen:
                    continue
                out[e.id] = (u, v)
                seen.add(v)
                queue.append(v)
        for e in self.edges:
            out.setdefault(e.id, (e.from_node, e.to_node))
        return out

    def parent_edge(self, node_id: str) -> str | None:
        """Edge feeding ``node_id`` from upstream.

        For the root, the single outgoing edge when there is exactly one
        (the substation feeder); otherwise ``None``.
        """
        oriented = self._orientation
        if node_id == self.root:
            outgoing = [eid for eid, (u, _) in oriented.items() if u == node_id]
            return outgoing[0] if len(outgoing) == 1 else None
        incoming = sorted(eid for eid, (_, v) in oriented.items() if v == node_id)
        return incoming[0] if incoming else None

    @property
    def is_tree(self) -> bool:
        return len(self.edges) == len(self.nodes) - 1

    def with_impedance_scale(self, s: float) -> "GridTopology":
        edges = [Edge(e.id, e.from_node, e.to_node, e.impedance * s) for e in self.edges]
        return GridTopology(self.nodes, edges, self.nominal_voltage)


@dataclass(frozen=True)
class StateOrdering:
    """Fixed positions of node voltages (first) and edge currents (after)."""

    node_ids: tuple[str, ...]
    edge_ids: tuple[str, ...]
    node_index: Mapping[str, int] = field(repr=False)
    edge_index: Mapping[str, int] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def m(self) -> int:
        return len(self.edge_ids)

    @property
    def N(self) -> int:
        return self.n + self.m

    def labels(self) -> list[tuple[str, str]]:
        """(id, kind) for every state position, kind in {'voltage', 'current'}."""
        return [(i, "voltage") for i in self.node_ids] + [(e, "current") for e in self.edge_ids]

    def position(self, ident: str, kind: str) -> int:
        try:
            return self.node_index[ident] if kind == "voltage" else self.edge_index[ident]
        except KeyError:
            raise GridError(f"unknown {kind} location {ident!r}") from None

    def voltage_slice(self) -> slice:
        return slice(0, self.n)

    def current_slice(self) -> slice:
        return slice(self.n, self.N)


@dataclass(frozen=True)
class StateVector:
    x: np.ndarray
    ordering: StateOrdering

    def __post_init__(self):
        x = np.asarray(self.x, dtype=complex)
        if x.shape != (self.ordering.N,):
            raise GridError(f"state has length {x.shape}, ordering expects {self.ordering.N}")
        object.__setattr__(self, "x", x)

    def voltage(self, node_id: str) -> complex:
        return complex(self.x[self.ordering.node_index[node_id]])

    def current(self, edge_id: str) -> complex:
        return complex(self.x[self.ordering.edge_index[edge_id]])

    @property
    def voltages(self) -> np.ndarray:
        return self.x[self.ordering.voltage_slice()]

    @property
    def currents(self) -> np.ndarray:
        return self.x[self.ordering.current_slice()]


@dataclass(frozen=True)
class ConstraintSystem:
    """Linear grid equations ``C x = c``; ``C`` is stored sparse (CSR)."""

    C: sp.csr_matrix
    c: np.ndarray
    row_labels: tuple[str, ...]

    @property
    def Q(self) -> int:
        return self.C.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x - self.c


@dataclass(frozen=True)
class SelectionMatrix:
    D: sp.csr_matrix
    measured: tuple[tuple[str, int], ...]

    @property
    def K(self) -> int:
        return self.D.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return np.array([p for _, p in self.measured], dtype=int)


def build_ordering(topology: GridTopology) -> StateOrdering:
    node_ids = sorted(n.id for n in topology.nodes)
    # root goes first, remaining nodes by id
    node_ids.remove(topology.root)
    node_ids.insert(0, topology.root)
    edge_ids = sorted(e.id for e in topology.edges)
    node_index = {nid: k for k, nid in enumerate(node_ids)}
    edge_index = {eid: len(node_ids) + k for k, eid in enumerate(edge_ids)}
    return StateOrdering(tuple(node_ids), tuple(edge_ids), node_index, edge_index)


def build_constraints(topology: GridTopology, ordering: StateOrdering) -> ConstraintSystem:
    """Kirchhoff rows at junction boxes plus one voltage-drop row per edge.

    Customer connections carry an unknown load current and the root is the
    supply point, so neither contributes a current balance row.
    """
    oriented = topology.oriented_edges()
    incident: dict[str, list[tuple[str, float]]] = {nid: [] for nid in ordering.node_ids}
    for eid in ordering.edge_ids:
        u, v = oriented[eid]
        incident[v].append((eid, 1.0))
        incident[u].append((eid, -1.0))
    kinds = {n.id: n.kind for n in topology.nodes}
    rows, cols, vals, labels = [], [], [], []
    q = 0
    for nid in ordering.node_ids:
        if kinds[nid] != NodeKind.JUNCTION:
            continue
        for eid, sign in incident[nid]:
            rows.append(q)
            cols.append(ordering.edge_index[eid])
            vals.append(sign)
        labels.append(f"kirchhoff@{nid}")
        q += 1
    impedance = {e.id: e.impedance for e in topology.edges}
    for eid in ordering.edge_ids:
        u, v = oriented[eid]
        z = impedance[eid]
        rows += [q, q, q]
        cols += [ordering.node_index[u], ordering.node_index[v], ordering.edge_index[eid]]
        vals += [1.0, -1.0, -z]
        labels.append(f"drop@{eid}")
        q += 1
    C = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(q, ordering.N))
    return ConstraintSystem(C, np.zeros(q, dtype=complex), tuple(labels))


def build_selection(
    ordering: StateOrdering,
    measured_nodes: Sequence[str] = (),
    measured_edges: Sequence[str] = (),
) -> SelectionMatrix:
    measured = [(nid, ordering.position(nid, "voltage")) for nid in measured_nodes]
    measured += [(eid, ordering.position(eid, "current")) for eid in measured_edges]
    if not measured:
        raise GridError("no measurements")
    positions = [p for _, p in measured]
    if len(set(positions)) != len(positions):
        raise GridError("the same state position is measured twice")
    K = len(measured)
    D = sp.csr_matrix((np.ones(K), (np.arange(K), positions)), shape=(K, ordering.N))
    return SelectionMatrix(D, tuple(measured))


def customer_scenario(topology: GridTopology) -> tuple[list[str], list[str]]:
    """Voltages at customer connections and the currents feeding them."""
    nodes = sorted(n.id for n in topology.nodes if n.kind == NodeKind.CUSTOMER)
    edges = [topology.parent_edge(nid) for nid in nodes]
    return nodes, [e for e in edges if e is not None]


def topology_from_dict(data: Mapping) -> GridTopology:
    try:
        nodes = [Node(str(n["id"]), NodeKind(n["kind"])) for n in data["nodes"]]
        edges = [
            Edge(str(e["id"]), str(e["from"]), str(e["to"]), complex(float(e["r"]), float(e["x"])))
            for e in data["edges"]
        ]
        nominal = float(data.get("nominal_voltage", 400.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise GridError(f"malformed grid description: {exc}") from exc
    return GridTopology(tuple(nodes), tuple(edges), nominal)


def topology_to_dict(topology: GridTopology) -> dict:
    return {
        "nominal_voltage": topology.nominal_voltage,
        "nodes": [{"id": n.id, "kind": n.kind.value} for n in topology.nodes],
        "edges": [
            {"id": e.id, "from": e.from_node, "to": e.to_node, "r": e.impedance.real, "x": e.impedance.imag}
            for e in topology.edges
        ],
    }


def load_topology(path: str | Path) -> GridTopology:
    with open(path) as fh:
        return topology_from_dict(json.load(fh))


def path_grid(impedances: Iterable[complex], nominal_voltage: float = 400.0) -> GridTopology:
    """Feeder ``N0 - N1 - ... - Nk`` with junction boxes inside and a customer at the end."""
    impedances = list(impedances)
    k = len(impedances)
    nodes = [Node("N0", NodeKind.ROOT)]
    nodes += [Node(f"N{i}", NodeKind.JUNCTION) for i in range(1, k)]
    nodes.append(Node(f"N{k}", NodeKind.CUSTOMER))
    edges = [Edge(f"E{i + 1}", f"N{i}", f"N{i + 1}", complex(z)) for i, z in enumerate(impedances)]
    return GridTopology(tuple(nodes), tuple(edges), nominal_voltage)
