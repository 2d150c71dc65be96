"""Deterministic synthetic low-voltage feeder used by the examples and tests.

The layout mimics a small town LV grid: a substation busbar, a handful of
cable feeders made of junction boxes, and customer connection boxes on short
service cables. Node ids follow the ``JB-<n>`` / ``SM-<n>`` naming of smart
meter deployments so that the usual report locations exist.
"""
from __future__ import annotations

import numpy as np

from .grid import Edge, GridTopology, Node, NodeKind
from .loadflow import LoadScenario

# ohm/km, single-phase equivalent
MAIN_CABLE = complex(0.206, 0.080)
OVERHEAD_LINE = complex(0.320, 0.300)
SERVICE_CABLE = complex(1.150, 0.090)
BUSBAR = complex(0.002, 0.004)

REPORT_LOCATIONS = ("Subst", "SM-70", "SM-109", "SM-134", "JB-42", "JB-44", "JB-106")

# feeder -> list of (junction id, cable length m, customers as (id, service length m))
_FEEDERS = {
    "A": [
        ("JB-42", 120, [("SM-70", 25), ("SM-71", 18)]),
        ("JB-43", 90, [("SM-72", 30)]),
        ("JB-44", 140, [("SM-73", 22), ("SM-74", 15), ("SM-75", 35)]),
        ("JB-45", 110, [("SM-76", 20), ("SM-77", 28)]),
    ],
    "B": [
        ("JB-104", 80, [("SM-105", 20)]),
        ("JB-106", 150, [("SM-107", 18), ("SM-108", 26)]),
        ("JB-109", 120, [("SM-109", 32), ("SM-110", 12)]),
        ("JB-111", 100, [("SM-111", 24)]),
    ],
    "C": [
        ("JB-130", 95, [("SM-130", 16), ("SM-131", 21)]),
        ("JB-132", 130, [("SM-132", 27)]),
        ("JB-133", 115, [("SM-133", 19), ("SM-134", 40)]),
    ],
}
# customers with rooftop PV (net feed-in around midday)
_PV = {"SM-70", "SM-72", "SM-73", "SM-75", "SM-131", "SM-133"}
# school / workshop on the overhead feeder, daytime demand
_COMMERCIAL = {"SM-107", "SM-108", "SM-109", "SM-111"}
COMMERCIAL_KW = (1500.0, 3500.0)


def example_grid(nominal_voltage: float = 400.0) -> GridTopology:
    """Substation, busbar junction and three radial feeders (32 nodes, 31 edges).

    Feeders A and C are underground cable, feeder B is an overhead line with a
    higher X/R ratio.
    """
    nodes = [Node("Subst", NodeKind.ROOT), Node("JB-1", NodeKind.JUNCTION)]
    edges = [Edge("L-1", "Subst", "JB-1", BUSBAR)]
    for name, feeder in _FEEDERS.items():
        upstream = "JB-1"
        line = OVERHEAD_LINE if name == "B" else MAIN_CABLE
        for jb, length, customers in feeder:
            nodes.append(Node(jb, NodeKind.JUNCTION))
            edges.append(Edge(f"L-{jb[3:]}", upstream, jb, line * length / 1000.0))
            for sm, service in customers:
                nodes.append(Node(sm, NodeKind.CUSTOMER))
                edges.append(Edge(f"S-{sm[3:]}", jb, sm, SERVICE_CABLE * service / 1000.0))
            upstream = jb
    return GridTopology(tuple(nodes), tuple(edges), nominal_voltage)


def _customers(topology: GridTopology) -> list[str]:
    return sorted(n.id for n in topology.nodes if n.kind == NodeKind.CUSTOMER)


def daily_scenarios(
    topology: GridTopology | None = None,
    n_intervals: int = 96,
    seed: int = 2023,
    slack_voltage: complex = 406.6,
) -> list[LoadScenario]:
    """15-minute load intervals over one day (P in W, Q in var).

    Household demand follows a morning/evening profile with lognormal spread;
    PV customers subtract a midday generation bump.
    """
    topology = topology or example_grid()
    rng = np.random.default_rng(seed)
    customers = _customers(topology)
    hours = np.arange(n_intervals) * 24.0 / n_intervals
    profile = 0.35 + 0.9 * np.exp(-((hours - 8.0) ** 2) / 3.0) + 1.4 * np.exp(-((hours - 19.0) ** 2) / 4.0)
    solar = np.clip(np.sin((hours - 6.0) / 12.0 * np.pi), 0.0, None) ** 1.5
    business = np.where((hours >= 7.0) & (hours <= 17.0), 1.0, 0.15)
    base = {c: rng.uniform(400.0, 1600.0) for c in customers}
    base.update({c: rng.uniform(COMMERCIAL_KW[0], COMMERCIAL_KW[1]) for c in customers if c in _COMMERCIAL})
    pv_peak = {c: rng.uniform(2500.0, 5000.0) for c in customers if c in _PV}
    pf = {c: rng.uniform(0.92, 0.98) for c in customers}
    scenarios = []
    for t in range(n_intervals):
        loads = {}
        for c in customers:
            shape = business[t] if c in _COMMERCIAL else profile[t]
            p = base[c] * shape * rng.lognormal(0.0, 0.35)
            q = p * np.tan(np.arccos(pf[c]))
            if c in pv_peak:
                p -= pv_peak[c] * solar[t] * rng.uniform(0.8, 1.0)
            loads[c] = (float(p), float(q))
        hh, mm = divmod(int(round(hours[t] * 60)), 60)
        scenarios.append(LoadScenario(complex(slack_voltage), loads, f"{hh:02d}:{mm:02d}"))
    return scenarios


def reference_scenario(topology: GridTopology | None = None) -> LoadScenario:
    """The 12:00 interval.

    PV feed-in lifts voltage angles on the cable feeders while the daytime
    commercial load on the overhead feeder pulls them negative, giving a mixed
    sign angle pattern similar to a real town grid around noon.
    """
    scenarios = daily_scenarios(topology)
    return next(s for s in scenarios if s.label == "12:00")
