"""Monte-Carlo calibration of confidence ellipses and noise sweeps.

A campaign repeatedly generates meter readings from a fixed true state,
estimates the full state and records whether each confidence ellipse covers
the true phasor. The ML system matrix depends only on the covariances,
selection and grid equations, so it is factorized once and every repetition
is a pair of dense matrix products.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import (
    AugmentedSystem,
    EstimateResult,
    assemble,
    confidence_ellipse,
    covariance_blocks,
    ellipse_contains,
    ellipse_from_covariance,
    mahalanobis_sq,
    solve,
)
from .grid import (
    ConstraintSystem,
    GridTopology,
    SelectionMatrix,
    StateOrdering,
    StateVector,
    build_constraints,
    build_ordering,
    build_selection,
    customer_scenario,
)
from .metering import (
    MeterLayout,
    NoiseSpec,
    PreparedMeasurements,
    RawMeasurements,
    assemble_em_covariances,
    generate_em,
    generate_pmu,
    meter_layout,
    pmu_sigmas,
    prepare_em,
)
from .quantiles import chi2_2_ppf_upper, two_sided_z

MODELS = ("pmu", "em")
SWEEP_PARAMETERS = ("sigma_u", "sigma_i", "sigma_phi")


def repetition_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for work item ``index`` of a campaign."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GridModel:
    """Topology with its state ordering, grid equations and meter placement."""

    topology: GridTopology
    ordering: StateOrdering
    constraints: ConstraintSystem
    selection: SelectionMatrix
    layout: MeterLayout

    @classmethod
    def build(cls, topology: GridTopology, measured_nodes=None, measured_edges=None) -> "GridModel":
        ordering = build_ordering(topology)
        if measured_nodes is None and measured_edges is None:
            measured_nodes, measured_edges = customer_scenario(topology)
        selection = build_selection(ordering, measured_nodes or (), measured_edges or ())
        return cls(topology, ordering, build_constraints(topology, ordering), selection,
                   meter_layout(topology, ordering, selection))

    def location_positions(self, node_ids: Sequence[str]) -> list[tuple[str, str, int]]:
        """(location, kind, state position) for the voltage and feeding current of each node."""
        out = []
        for nid in node_ids:
            out.append((nid, "voltage", self.ordering.position(nid, "voltage")))
            eid = self.topology.parent_edge(nid)
            if eid is not None:
                out.append((nid, "current", self.ordering.edge_index[eid]))
        return out


def measurement_covariances(model: GridModel, true_state: StateVector, meter: str, spec: NoiseSpec):
    """``(sigma1, sigma2)`` diagonals handed to the estimator, built from true magnitudes."""
    Dx = true_state.x[model.selection.positions]
    nominal = model.topology.nominal_voltage
    if meter == "pmu":
        sig = pmu_sigmas(Dx, model.layout, spec, nominal)
        return sig**2, np.zeros(model.layout.K, dtype=complex)
    if meter == "em":
        return assemble_em_covariances(Dx, model.layout, spec, nominal)
    raise ValueError(f"unknown meter model {meter!r}; expected one of {MODELS}")


def simulate_measurements(
    model: GridModel, true_state: StateVector, meter: str, spec: NoiseSpec, rng: np.random.Generator,
    size: int | None = None,
) -> tuple[np.ndarray, RawMeasurements | PreparedMeasurements]:
    """Prepared measurement vector(s) ``z`` plus the raw generator output."""
    Dx = true_state.x[model.selection.positions]
    nominal = model.topology.nominal_voltage
    if meter == "pmu":
        sig = pmu_sigmas(Dx, model.layout, spec, nominal)
        pm = generate_pmu(Dx, sig, rng, size=size)
        return pm.z, pm
    if meter == "em":
        raw = generate_em(Dx, model.layout, spec, nominal, rng, size=size)
        return prepare_em(raw), raw
    raise ValueError(f"unknown meter model {meter!r}; expected one of {MODELS}")


def estimate_state(model: GridModel, z, sigma1, sigma2) -> EstimateResult:
    sys = assemble(z, sigma1, sigma2, model.selection.D, model.constraints.C, model.constraints.c)
    return solve(sys)


@dataclass(frozen=True)
class CampaignConfig:
    """Monte-Carlo campaign settings.

    ``alpha`` is the complement of the confidence level (0.05 for 95 %
    ellipses). ``multipliers`` scales the magnitude and local-angle error stds
    (keys ``sigma_u``, ``sigma_i``, ``sigma_phi``).
    """

    meter: str = "pmu"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    repetitions: int = 5000
    alpha: float = 0.05
    seed: int = 0
    multipliers: dict = field(default_factory=dict)
    report_locations: tuple[str, ...] = ()
    exclude_root: bool = False
    chunk_size: int = 1000
    workers: int | None = None

    def __post_init__(self):
        if self.meter not in MODELS:
            raise ValueError(f"unknown meter model {self.meter!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        unknown = set(self.multipliers) - set(SWEEP_PARAMETERS)
        if unknown:
            raise ValueError(f"unknown multipliers {sorted(unknown)}")
        if any(v <= 0 for v in self.multipliers.values()):
            raise ValueError("multipliers must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")

    @property
    def effective_noise(self) -> NoiseSpec:
        return self.noise.scaled(**self.multipliers)


@dataclass(frozen=True)
class HitRateReport:
    labels: tuple[tuple[str, str], ...]
    hit_rate: np.ndarray
    dev_hr: np.ndarray
    repetitions: int
    seed: int
    alpha: float
    meter: str
    root: str
    exclude_root: bool = False
    report_locations: tuple[tuple[str, str, int], ...] = ()

    def _mask(self, kind: str) -> np.ndarray:
        mask = np.array([k == kind for _, k in self.labels])
        if kind == "voltage" and self.exclude_root:
            mask &= np.array([i != self.root for i, _ in self.labels])
        return mask

    @property
    def avg_voltage_hr(self) -> float:
        return float(self.hit_rate[self._mask("voltage")].mean())

    @property
    def avg_current_hr(self) -> float:
        return float(self.hit_rate[self._mask("current")].mean())

    @property
    def avg_voltage_dev(self) -> float:
        return float(self.dev_hr[self._mask("voltage")].mean())

    @property
    def avg_current_dev(self) -> float:
        return float(self.dev_hr[self._mask("current")].mean())

    def summary(self) -> dict:
        return {
            "meter": self.meter,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "alpha": self.alpha,
            "avg_voltage_hr": self.avg_voltage_hr,
            "avg_voltage_dev_hr": self.avg_voltage_dev,
            "avg_current_hr": self.avg_current_hr,
            "avg_current_dev_hr": self.avg_current_dev,
        }

    def to_dict(self) -> dict:
        out = self.summary()
        out["locations"] = [
            {"location": i, "kind": k, "hr": float(h), "dev_hr": float(d)}
            for (i, k), h, d in zip(self.labels, self.hit_rate, self.dev_hr)
        ]
        if self.report_locations:
            out["report"] = [
                {"location": loc, "kind": kind, "hr": float(self.hit_rate[pos]), "dev_hr": float(self.dev_hr[pos])}
                for loc, kind, pos in self.report_locations
            ]
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["location", "kind", "HR", "DevHR"])
            for (i, k), h, d in zip(self.labels, self.hit_rate, self.dev_hr):
                w.writerow([i, k, repr(float(h)), repr(float(d))])

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def hit_rate_deviation(hr, repetitions: int, confidence: float = 0.95):
    """Width ``UB - LB`` of the normal-approximation (Wald) binomial interval."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    hr = np.asarray(hr, dtype=float)
    if np.any((hr < 0) | (hr > 1)):
        raise ValueError("hit rates must lie in [0, 1]")
    z = two_sided_z(1.0 - confidence)
    out = 2.0 * z * np.sqrt(hr * (1.0 - hr) / repetitions)
    return float(out) if out.ndim == 0 else out


def _count_hits(system: AugmentedSystem, cov: np.ndarray, z: np.ndarray, x: np.ndarray, q: float) -> np.ndarray:
    x_hat = system.estimate(z)
    return (mahalanobis_sq(cov, x_hat - x) <= q).sum(axis=0)


def run_campaign(model: GridModel, true_state: StateVector, config: CampaignConfig) -> HitRateReport:
    """Hit rate of every state entry over ``config.repetitions`` repetitions.

    Repetitions are split into chunks of ``chunk_size``; chunk ``j`` draws from
    its own stream ``(seed, j)``, so the report does not depend on the number
    of workers.
    """
    spec = config.effective_noise
    s1, s2 = measurement_covariances(model, true_state, config.meter, spec)
    system = assemble(None, s1, s2, model.selection.D, model.constraints.C, model.constraints.c)
    cov = covariance_blocks(system.F1, system.F2)
    q = chi2_2_ppf_upper(config.alpha)
    x = true_state.x
    R = config.repetitions
    sizes = [min(config.chunk_size, R - start) for start in range(0, R, config.chunk_size)]

    def work(j: int) -> np.ndarray:
        rng = repetition_rng(config.seed, j)
        z, _ = simulate_measurements(model, true_state, config.meter, spec, rng, size=sizes[j])
        return _count_hits(system, cov, z, x, q)

    workers = config.workers or os.cpu_count() or 1
    if workers == 1 or len(sizes) == 1:
        counts = [work(j) for j in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(work, range(len(sizes))))
    hits = np.sum(counts, axis=0)
    hr = hits / R
    reports = tuple(model.location_positions(config.report_locations)) if config.report_locations else ()
    return HitRateReport(
        tuple(model.ordering.labels()), hr, hit_rate_deviation(hr, R), R, config.seed, config.alpha,
        config.meter, model.topology.root, config.exclude_root, reports,
    )


def confidence_range(ellipse, n_points: int = 3600) -> float:
    """``max |w| - min |w|`` over the closed elliptical region.

    The maximum lies on the boundary; the minimum is zero when the origin is
    inside, otherwise it lies on the boundary as well.
    """
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    rot = np.exp(1j * ellipse.angle)
    boundary = ellipse.center + rot * (ellipse.semi_major * np.cos(t) + 1j * ellipse.semi_minor * np.sin(t))
    mags = np.abs(np.append(boundary, ellipse.center))
    lo = 0.0 if ellipse_contains(ellipse, 0.0) else float(mags.min())
    return float(mags.max() - lo)


@dataclass(frozen=True)
class ConfidenceRangeReport:
    parameter: str
    values: tuple[float, ...]
    rows: tuple[tuple[str, str, float, float], ...]  # (location, kind, value, delta_c)

    def series(self, location: str, kind: str) -> np.ndarray:
        return np.array([dc for loc, k, _, dc in self.rows if loc == location and k == kind])

    def locations(self) -> list[tuple[str, str]]:
        seen = []
        for loc, k, _, _ in self.rows:
            if (loc, k) not in seen:
                seen.append((loc, k))
        return seen

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["location", "kind", "param", "value", "delta_c"])
            for loc, k, v, dc in self.rows:
                w.writerow([loc, k, self.parameter, repr(v), repr(dc)])

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "parameter": self.parameter,
                "values": list(self.values),
                "rows": [{"location": loc, "kind": k, "value": v, "delta_c": dc} for loc, k, v, dc in self.rows],
            }, fh, indent=2)


def ellipse_covariances(model: GridModel, true_state: StateVector, meter: str, spec: NoiseSpec) -> np.ndarray:
    """Per-index 2x2 estimator covariances; these do not depend on the measured values."""
    s1, s2 = measurement_covariances(model, true_state, meter, spec)
    system = assemble(None, s1, s2, model.selection.D, model.constraints.C, model.constraints.c)
    return covariance_blocks(system.F1, system.F2)


def sweep(
    model: GridModel,
    true_state: StateVector,
    base: CampaignConfig,
    parameter: str,
    values: Sequence[float],
    locations: Sequence[str] | None = None,
) -> ConfidenceRangeReport:
    """Confidence ranges at each location as one noise std is varied.

    ``sigma_u`` / ``sigma_i`` set absolute magnitude error stds (V / A),
    ``sigma_phi`` the local-angle std (rad). Ellipses are centred on the true
    phasors, which is where the estimates scatter around.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")
    values = [float(v) for v in values]
    if any(b < a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be sorted ascending")
    locations = list(locations) if locations else list(base.report_locations or model.ordering.node_ids)
    targets = model.location_positions(locations)
    q_alpha = base.alpha
    rows = []
    for v in values:
        spec = replace(base.effective_noise, **{parameter: v})
        cov = ellipse_covariances(model, true_state, base.meter, spec)
        for loc, kind, pos in targets:
            ell = ellipse_from_covariance(true_state.x[pos], cov[pos], q_alpha)
            rows.append((loc, kind, v, confidence_range(ell)))
    return ConfidenceRangeReport(parameter, tuple(values), tuple(rows))


def coverage_tolerance(alpha: float, repetitions: int, k_eff: int = 1) -> float:
    """Three binomial standard errors of an averaged hit rate."""
    return 3.0 * math.sqrt(alpha * (1.0 - alpha) / (repetitions * k_eff))
