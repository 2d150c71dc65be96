"""Newton-Raphson load flow producing the reference ("true") grid state."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridTopology, NodeKind, StateOrdering, StateVector


class LoadFlowError(RuntimeError):
    """Raised when Newton-Raphson fails to converge or the Jacobian is singular."""


@dataclass(frozen=True)
class LoadScenario:
    """Slack voltage and per-customer consumption (P in W, Q in var; negative = feed-in)."""

    slack_voltage: complex
    loads: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if abs(self.slack_voltage) <= 0:
            raise ValueError("slack voltage magnitude must be positive")


@dataclass(frozen=True)
class LoadFlowResult:
    state: StateVector
    iterations: int
    max_mismatch: float


def _admittance(topology: GridTopology, ordering: StateOrdering) -> sp.csr_matrix:
    n = ordering.n
    rows, cols, vals = [], [], []
    for e in topology.edges:
        if e.impedance == 0:
            raise LoadFlowError(f"edge {e.id!r} has zero impedance")
        y = 1.0 / e.impedance
        i, j = ordering.node_index[e.from_node], ordering.node_index[e.to_node]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [y, y, -y, -y]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def _check_scenario(topology: GridTopology, scenario: LoadScenario) -> None:
    kinds = {n.id: n.kind for n in topology.nodes}
    for nid in scenario.loads:
        if nid not in kinds:
            raise ValueError(f"load at unknown node {nid!r}")
        if kinds[nid] != NodeKind.CUSTOMER:
            raise ValueError(f"load at {nid!r}, which is not a customer connection")


def solve_loadflow(
    topology: GridTopology,
    ordering: StateOrdering,
    scenario: LoadScenario,
    tol: float = 1e-10,
    max_iter: int = 50,
    s_base: float = 1e5,
) -> LoadFlowResult:
    """Polar Newton-Raphson with the substation root as slack and all other nodes PQ.

    ``tol`` is the largest admissible power mismatch in per unit of ``s_base``.
    Iteration starts flat (every voltage equal to the slack voltage).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_scenario(topology, scenario)
    n = ordering.n
    Y = _admittance(topology, ordering).tocsc()
    s_spec = np.zeros(n, dtype=complex)
    for nid, (p, q) in scenario.loads.items():
        s_spec[ordering.node_index[nid]] -= complex(p, q)
    s_spec /= s_base
    Y_pu = Y / s_base
    pq = np.arange(1, n)

    V = np.full(n, complex(scenario.slack_voltage))

    def mismatch(V):
        return V * np.conj(Y_pu @ V) - s_spec

    it = 0
    F = mismatch(V)[pq]
    err = np.max(np.abs(np.r_[F.real, F.imag]), initial=0.0)
    while err > tol:
        if it >= max_iter:
            raise LoadFlowError(f"no convergence after {max_iter} iterations (mismatch {err:.3e} p.u.)")
        Ibus = Y_pu @ V
        diagV = sp.diags(V)
        diagI = sp.diags(Ibus)
        diagVn = sp.diags(V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(diagI - Y_pu @ diagV)
        dS_dVm = diagV @ np.conj(Y_pu @ diagVn) + np.conj(diagI) @ diagVn
        dS_dVa = sp.csr_matrix(dS_dVa)[pq][:, pq]
        dS_dVm = sp.csr_matrix(dS_dVm)[pq][:, pq]
        J = sp.bmat([[dS_dVa.real, dS_dVm.real], [dS_dVa.imag, dS_dVm.imag]], format="csc")
        try:
            with np.errstate(all="raise"):
                dx = spla.spsolve(J, -np.r_[F.real, F.imag])
        except (RuntimeError, FloatingPointError) as exc:
            raise LoadFlowError("singular Jacobian") from exc
        if not np.all(np.isfinite(dx)):
            raise LoadFlowError("singular Jacobian")
        k = len(pq)
        Va = np.angle(V)
        Vm = np.abs(V)
        Va[pq] += dx[:k]
        Vm[pq] += dx[k:]
        V = Vm * np.exp(1j * Va)
        it += 1
        F = mismatch(V)[pq]
        err = np.max(np.abs(np.r_[F.real, F.imag]), initial=0.0)

    V[0] = scenario.slack_voltage
    x = np.empty(ordering.N, dtype=complex)
    x[: ordering.n] = V
    oriented = topology.oriented_edges()
    impedance = {e.id: e.impedance for e in topology.edges}
    for eid in ordering.edge_ids:
        u, v = oriented[eid]
        x[ordering.edge_index[eid]] = (V[ordering.node_index[u]] - V[ordering.node_index[v]]) / impedance[eid]
    return LoadFlowResult(StateVector(x, ordering), it, float(err * s_base))


def node_injections(topology: GridTopology, state: StateVector) -> dict[str, complex]:
    """Net current drawn at each node: inflow minus outflow along oriented edges."""
    ordering = state.ordering
    net = defaultdict(complex)
    for eid, (u, v) in topology.oriented_edges().items():
        i = state.x[ordering.edge_index[eid]]
        net[v] += i
        net[u] -= i
    return {nid: complex(net[nid]) for nid in ordering.node_ids}


def empirical_theta_sigma(states: Sequence[StateVector]) -> float:
    """Sample std of voltage phase angles pooled over all nodes and all states.

    The root node (angle pinned to zero) is included.
    """
    if len(states) < 2:
        raise ValueError("need at least two states")
    angles = np.concatenate([np.angle(s.voltages) for s in states])
    return float(np.std(angles, ddof=1))


def scenario_from_dict(data: Mapping) -> LoadScenario:
    sv = data["slack_voltage"]
    slack = complex(float(sv["re"]), float(sv.get("im", 0.0))) if isinstance(sv, Mapping) else complex(sv)
    loads = {str(item["node"]): (float(item["p"]), float(item["q"])) for item in data.get("loads", [])}
    return LoadScenario(slack, loads, str(data.get("label", "")))


def scenario_to_dict(scenario: LoadScenario) -> dict:
    v = complex(scenario.slack_voltage)
    return {
        "slack_voltage": {"re": v.real, "im": v.imag},
        "loads": [{"node": k, "p": p, "q": q} for k, (p, q) in scenario.loads.items()],
    }


def load_scenario(path: str | Path) -> LoadScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def load_interval_csv(path: str | Path, slack_voltage: complex) -> list[LoadScenario]:
    """Smart-meter intervals (columns node_id, timestamp, p_w, q_var) -> one scenario per timestamp."""
    by_ts: dict[str, dict[str, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"node_id", "timestamp", "p_w", "q_var"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"interval CSV lacks columns {sorted(missing)}")
        for row in reader:
            by_ts.setdefault(row["timestamp"], {})[row["node_id"]] = (float(row["p_w"]), float(row["q_var"]))
    return [LoadScenario(slack_voltage, loads, ts) for ts, loads in sorted(by_ts.items())]


def state_to_records(topology: GridTopology, state: StateVector) -> list[dict]:
    kinds = {n.id: n.kind.value for n in topology.nodes}
    out = []
    for (ident, kind), value in zip(state.ordering.labels(), state.x):
        rec = {"id": ident, "kind": kind, "re": float(value.real), "im": float(value.imag)}
        if kind == "voltage":
            rec["node_kind"] = kinds[ident]
        out.append(rec)
    return out


def state_from_records(records: Sequence[Mapping], ordering: StateOrdering) -> StateVector:
    x = np.full(ordering.N, np.nan + 0j)
    for rec in records:
        x[ordering.position(str(rec["id"]), rec["kind"])] = complex(float(rec["re"]), float(rec["im"]))
    if np.any(np.isnan(x)):
        raise ValueError("state file does not cover every state position")
    return StateVector(x, ordering)
