"""Meter simulation, data preparation and complex-Gaussian moment matching.

Two meter models are covered:

* PMU: measures voltage and current phasors directly with circular complex
  Gaussian noise. Data preparation is the identity.
* EM (electrical meter): measures voltage magnitude, current magnitude and the
  local angle between them. Voltage phases are unknown and replaced by the
  pseudo-measurement ``theta = 0``.

The estimator consumes a complex vector ``z`` together with the diagonal
variance ``sigma1`` and pseudo-variance ``sigma2``. For the EM model these come
from matching the first and second moments of ``(a + e_mag) exp(j (nu + e_ang))``
with Gaussian ``e_ang``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .quantiles import norm_ppf


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement error parameters.

    ``rho_u`` is relative to the nominal voltage, ``rho_i`` relative to the true
    current magnitude at each meter. ``sigma_u`` / ``sigma_i`` optionally fix the
    magnitude error std in volts / amperes and take precedence over the
    relative errors.
    """

    rho_u: float = 0.01
    rho_i: float = 0.03
    sigma_phi: float = 0.01
    sigma_theta: float = 0.003
    beta: float = 0.99
    sigma_u: float | None = None
    sigma_i: float | None = None

    def __post_init__(self):
        for name in ("rho_u", "rho_i", "sigma_phi", "sigma_theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("sigma_u", "sigma_i"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    def voltage_std(self, nominal_voltage: float) -> float:
        if self.sigma_u is not None:
            return self.sigma_u
        return rho_to_sigma(self.rho_u, self.beta, nominal_voltage)

    def current_std(self, magnitude: np.ndarray | float) -> np.ndarray:
        magnitude = np.abs(np.asarray(magnitude, dtype=float))
        if self.sigma_i is not None:
            return np.full_like(magnitude, self.sigma_i)
        r0 = norm_ppf((1.0 + self.beta) / 2.0)
        return magnitude * self.rho_i / r0

    def scaled(self, sigma_u: float = 1.0, sigma_i: float = 1.0, sigma_phi: float = 1.0) -> "NoiseSpec":
        """Multiply the magnitude and local-angle error stds by the given factors."""
        if min(sigma_u, sigma_i, sigma_phi) <= 0:
            raise ValueError("multipliers must be positive")
        return replace(
            self,
            rho_u=self.rho_u * sigma_u,
            rho_i=self.rho_i * sigma_i,
            sigma_u=None if self.sigma_u is None else self.sigma_u * sigma_u,
            sigma_i=None if self.sigma_i is None else self.sigma_i * sigma_i,
            sigma_phi=self.sigma_phi * sigma_phi,
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseSpec":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data and data[k] is not None}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown noise spec fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in known.items()})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def load_noise_spec(path: str | Path) -> NoiseSpec:
    with open(path) as fh:
        return NoiseSpec.from_dict(json.load(fh))


def rho_to_sigma(rho: float, beta: float, mu: float) -> float:
    """Std such that a fraction ``beta`` of Gaussian samples lie in ``mu (1 +- rho)``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if mu <= 0:
        raise ValueError("mu must be positive")
    return mu * rho / norm_ppf((1.0 + beta) / 2.0)


@dataclass(frozen=True)
class MomentTriple:
    mu: complex
    var: float
    pvar: complex


def em_moments(
    a: float, nu: float, sigma_mag: float, sigma_angles: Sequence[float] = ()
) -> MomentTriple:
    """Mean, variance and pseudo-variance of ``(a + e) exp(j (nu + sum(d)))``.

    ``e ~ N(0, sigma_mag^2)`` and each angle error ``d ~ N(0, s^2)`` for ``s`` in
    ``sigma_angles``, all independent.
    """
    if sigma_mag < 0 or any(s < 0 for s in sigma_angles):
        raise ValueError("standard deviations must be nonnegative")
    s2 = float(sum(s * s for s in sigma_angles))
    # characteristic function of the summed Gaussian angle error at t = 1, 2
    c1 = np.exp(-s2 / 2.0)
    c2 = np.exp(-2.0 * s2)
    a2 = a * a
    mu = a * np.exp(1j * nu) * c1
    var = (1.0 - c1 * c1) * a2 + sigma_mag**2
    pvar = np.exp(2j * nu) * ((a2 + sigma_mag**2) * c2 - a2 * c1 * c1)
    return MomentTriple(complex(mu), float(var), complex(pvar))


def _em_moments_vec(a, nu, sigma_mag, s2):
    c1 = np.exp(-s2 / 2.0)
    c2 = np.exp(-2.0 * s2)
    a2 = a * a
    var = (1.0 - c1 * c1) * a2 + sigma_mag**2
    pvar = np.exp(2j * nu) * ((a2 + sigma_mag**2) * c2 - a2 * c1 * c1)
    return var, pvar


@dataclass(frozen=True)
class MeterLayout:
    """Which state positions are measured and what they are.

    ``kinds[k]`` is ``'voltage'`` or ``'current'``. ``pair[k]`` is, for a current
    entry, the index (into the same layout) of the co-located voltage entry
    that provides the angle reference; ``-1`` for voltage entries.
    """

    ids: tuple[str, ...]
    kinds: tuple[str, ...]
    positions: np.ndarray
    pair: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=int))
        object.__setattr__(self, "pair", np.asarray(self.pair, dtype=int))
        if not (len(self.ids) == len(self.kinds) == len(self.positions) == len(self.pair)):
            raise ValueError("layout fields differ in length")

    @property
    def K(self) -> int:
        return len(self.ids)

    @property
    def is_voltage(self) -> np.ndarray:
        return np.array([k == "voltage" for k in self.kinds], dtype=bool)


def meter_layout(topology, ordering, selection) -> MeterLayout:
    """Build a layout from a selection; currents pair with their downstream node voltage."""
    oriented = topology.oriented_edges()
    ids, kinds, positions = [], [], []
    for ident, pos in selection.measured:
        ids.append(ident)
        positions.append(pos)
        kinds.append("voltage" if pos < ordering.n else "current")
    where = {(ids[k], kinds[k]): k for k in range(len(ids))}
    pair = []
    for k, kind in enumerate(kinds):
        if kind == "voltage":
            pair.append(-1)
            continue
        u, v = oriented[ids[k]]
        ref = where.get((v, "voltage"), where.get((u, "voltage")))
        pair.append(-1 if ref is None else ref)
    return MeterLayout(tuple(ids), tuple(kinds), np.array(positions), np.array(pair))


@dataclass(frozen=True)
class PreparedMeasurements:
    z: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    source: str = "PMU"

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        s1 = np.asarray(self.sigma1, dtype=float)
        s2 = np.asarray(self.sigma2, dtype=complex)
        if not (z.shape[-1] == s1.shape[0] == s2.shape[0]):
            raise ValueError("z, sigma1 and sigma2 differ in length")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma1", s1)
        object.__setattr__(self, "sigma2", s2)


@dataclass(frozen=True)
class RawMeasurements:
    """EM readings; ``phi`` is NaN at voltage-only entries.

    Arrays may carry a leading batch axis (repetitions).
    """

    layout: MeterLayout
    magnitude: np.ndarray
    phi: np.ndarray = field(default=None)

    @property
    def y(self) -> np.ndarray:
        """Flat real measurement vector: all magnitudes, then local angles of current entries."""
        cur = ~self.layout.is_voltage
        return np.concatenate([self.magnitude, self.phi[..., cur]], axis=-1)


def sample_complex_normal(mu, sigma1, sigma2, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw independent scalar complex normals with variance ``sigma1`` and pseudo-variance ``sigma2``."""
    mu = np.asarray(mu, dtype=complex)
    s1 = np.asarray(sigma1, dtype=float)
    s2 = np.asarray(sigma2, dtype=complex)
    shape = mu.shape if size is None else (size,) + mu.shape
    vr = (s1 + s2.real) / 2.0
    vi = (s1 - s2.real) / 2.0
    cri = s2.imag / 2.0
    if np.any(vr < -1e-12 * s1) or np.any(vi < -1e-12 * s1):
        raise ValueError("|pseudo-variance| exceeds variance")
    sr = np.sqrt(np.clip(vr, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(sr > 0, cri / np.where(sr > 0, sr, 1.0), 0.0)
    si = np.sqrt(np.clip(vi - slope**2, 0.0, None))
    e1 = rng.standard_normal(shape)
    e2 = rng.standard_normal(shape)
    return mu + sr * e1 + 1j * (slope * e1 + si * e2)


def generate_pmu(true_phasors, sigmas, rng: np.random.Generator, size: int | None = None) -> PreparedMeasurements:
    """Add circular complex Gaussian noise with total variance ``sigmas**2``."""
    true_phasors = np.asarray(true_phasors, dtype=complex)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != true_phasors.shape:
        raise ValueError(f"{sigmas.shape[0] if sigmas.ndim else 0} sigmas for {true_phasors.shape[0]} phasors")
    if np.any(sigmas < 0):
        raise ValueError("sigmas must be nonnegative")
    shape = true_phasors.shape if size is None else (size,) + true_phasors.shape
    scale = sigmas / np.sqrt(2.0)
    noise = rng.standard_normal(shape) * scale + 1j * rng.standard_normal(shape) * scale
    return PreparedMeasurements(true_phasors + noise, sigmas**2, np.zeros_like(true_phasors), "PMU")


def pmu_sigmas(true_phasors, layout: MeterLayout, spec: NoiseSpec, nominal_voltage: float) -> np.ndarray:
    """Per-entry PMU noise std: voltage-magnitude std at voltages, current-magnitude std at currents."""
    true_phasors = np.asarray(true_phasors, dtype=complex)
    volt = layout.is_voltage
    sig = np.empty(layout.K)
    sig[volt] = spec.voltage_std(nominal_voltage)
    sig[~volt] = spec.current_std(np.abs(true_phasors[~volt]))
    return sig


def _local_angles(true_phasors, layout: MeterLayout) -> np.ndarray:
    true_phasors = np.asarray(true_phasors, dtype=complex)
    phi = np.full(layout.K, np.nan)
    for k in np.flatnonzero(~layout.is_voltage):
        ref = layout.pair[k]
        theta = np.angle(true_phasors[ref]) if ref >= 0 else 0.0
        phi[k] = np.angle(true_phasors[k]) - theta
    return phi


def generate_em(
    true_phasors,
    layout: MeterLayout,
    spec: NoiseSpec,
    nominal_voltage: float,
    rng: np.random.Generator,
    size: int | None = None,
) -> RawMeasurements:
    """Noisy magnitudes and local angles; no absolute voltage angle is produced."""
    true_phasors = np.asarray(true_phasors, dtype=complex)
    if true_phasors.shape != (layout.K,):
        raise ValueError("true phasors do not match the meter layout")
    if np.any(layout.pair[~layout.is_voltage] < 0):
        raise ValueError("current meter without a co-located voltage reference")
    volt = layout.is_voltage
    mag = np.abs(true_phasors)
    std = np.empty(layout.K)
    std[volt] = spec.voltage_std(nominal_voltage)
    std[~volt] = spec.current_std(mag[~volt])
    phi_true = _local_angles(true_phasors, layout)
    shape = (layout.K,) if size is None else (size, layout.K)
    magnitude = mag + std * rng.standard_normal(shape)
    ang_noise = spec.sigma_phi * rng.standard_normal(shape)
    phi = np.where(volt, np.nan, phi_true + ang_noise)
    return RawMeasurements(layout, magnitude, phi)


def prepare_em(raw: RawMeasurements) -> np.ndarray:
    """Phasors from EM readings with the voltage phase pseudo-measured as zero."""
    layout = raw.layout
    if np.any(layout.pair[~layout.is_voltage] < 0):
        raise ValueError("unpaired current measurement")
    volt = layout.is_voltage
    phase = np.where(volt, 0.0, np.nan_to_num(raw.phi))
    return raw.magnitude * np.exp(1j * phase)


def assemble_em_covariances(
    phasors, layout: MeterLayout, spec: NoiseSpec, nominal_voltage: float, magnitudes=None
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``Sigma_1`` (real) and ``Sigma_2`` (complex) for the EM model.

    ``phasors`` supplies magnitude and absolute angle at each meter. In the
    assessment setting these are the true phasors; in field use the prepared
    measurements can be passed instead. ``magnitudes`` overrides the magnitudes
    used to scale the relative current error.
    """
    phasors = np.asarray(phasors, dtype=complex)
    if phasors.shape != (layout.K,):
        raise ValueError("phasors do not match the meter layout")
    volt = layout.is_voltage
    a = np.abs(phasors)
    nu = np.angle(phasors)
    mag_ref = a if magnitudes is None else np.abs(np.asarray(magnitudes, dtype=float))
    smag = np.empty(layout.K)
    smag[volt] = spec.voltage_std(nominal_voltage)
    smag[~volt] = spec.current_std(mag_ref[~volt])
    s2 = np.where(volt, spec.sigma_theta**2, spec.sigma_theta**2 + spec.sigma_phi**2)
    var, pvar = _em_moments_vec(a, nu, smag, s2)
    return var, pvar


def write_raw_csv(path: str | Path, raw: RawMeasurements) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meter_id", "kind", "u", "i", "phi"])
        for k in range(raw.layout.K):
            kind = raw.layout.kinds[k]
            m = float(raw.magnitude[k])
            if kind == "voltage":
                w.writerow([raw.layout.ids[k], kind, repr(m), "", ""])
            else:
                w.writerow([raw.layout.ids[k], kind, "", repr(m), repr(float(raw.phi[k]))])


def read_raw_csv(path: str | Path, layout: MeterLayout) -> RawMeasurements:
    """Read EM readings in the column layout written by :func:`write_raw_csv`."""
    where = {(layout.ids[k], layout.kinds[k]): k for k in range(layout.K)}
    mag = np.full(layout.K, np.nan)
    phi = np.full(layout.K, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["meter_id"], row["kind"])
            if key not in where:
                raise ValueError(f"measurement {key} is not part of the meter layout")
            k = where[key]
            if row["kind"] == "voltage":
                mag[k] = float(row["u"])
            else:
                mag[k] = float(row["i"])
                phi[k] = float(row["phi"])
    if np.any(np.isnan(mag)):
        missing = [layout.ids[k] for k in np.flatnonzero(np.isnan(mag))]
        raise ValueError(f"missing measurements for {missing}")
    return RawMeasurements(layout, mag, phi)


def write_prepared_csv(path: str | Path, layout: MeterLayout, prepared: PreparedMeasurements) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meter_id", "kind", "re", "im", "sigma1", "sigma2_re", "sigma2_im"])
        for k in range(layout.K):
            z = complex(prepared.z[k])
            s2 = complex(prepared.sigma2[k])
            w.writerow([layout.ids[k], layout.kinds[k], repr(z.real), repr(z.imag),
                        repr(float(prepared.sigma1[k])), repr(s2.real), repr(s2.imag)])
