"""Constrained maximum-likelihood estimation with complex augmented algebra.

Measurements follow ``z ~ CN(D x, Sigma1, Sigma2)`` with diagonal covariance
and pseudo-covariance; the state satisfies ``C x = c``. Stationarity of the
Lagrangian gives the linear system

    [ Gbar   Cbar^H ] [ xbar   ]   [ gbar ]
    [ Cbar   0      ] [ lambar ] = [ cbar ]

where ``vbar = (v, conj(v))`` and ``Bbar = [[B1, B2], [conj(B2), conj(B1)]]``.
The upper-left block ``F11bar`` of the inverse gives the estimator covariance
``2 F11bar``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .quantiles import chi2_2_ppf_upper, two_sided_z

log = logging.getLogger(__name__)

RCOND_MIN = 1e-12
DEGENERATE_TOL = 1e-12


class EstimationError(ValueError):
    """Measurement covariance unusable (P not positive definite, zero variance)."""


class NonIdentifiable(RuntimeError):
    """The ML system matrix is singular or numerically close to it."""

    def __init__(self, message: str, rcond: float | None = None):
        super().__init__(message if rcond is None else f"{message} (rcond estimate {rcond:.3e})")
        self.rcond = rcond


class CovarianceInconsistency(ArithmeticError):
    pass


def _augment(B1, B2):
    return sp.bmat([[B1, B2], [B2.conj(), B1.conj()]], format="csc")


@dataclass(eq=False)
class AugmentedSystem:
    """ML equation for one measurement covariance, selection and constraint set.

    The factorization of ``A`` depends only on ``(sigma1, sigma2, D, C)`` and is
    cached; :meth:`estimate` reuses it for any number of measurement vectors.
    Treat instances as read-only once built.
    """

    D: sp.csr_matrix
    C: sp.csr_matrix
    c: np.ndarray
    p: np.ndarray
    w: np.ndarray
    z: np.ndarray | None
    G1: sp.csr_matrix
    G2: sp.csr_matrix
    g: np.ndarray | None
    A: sp.csc_matrix = field(repr=False)
    rcond: float = field(default=float("nan"), repr=False)

    @property
    def N(self) -> int:
        return self.D.shape[1]

    @property
    def K(self) -> int:
        return self.D.shape[0]

    @property
    def Q(self) -> int:
        return self.C.shape[0]

    @property
    def P(self) -> sp.dia_matrix:
        return sp.diags(self.p)

    @property
    def W(self) -> sp.dia_matrix:
        return sp.diags(self.w)

    @property
    def G_bar(self) -> sp.csc_matrix:
        return _augment(self.G1, self.G2)

    def g_of(self, z: np.ndarray) -> np.ndarray:
        """``2 D^H (P*)^-1 (z - W z*)``; ``z`` may carry a leading batch axis."""
        z = np.asarray(z, dtype=complex)
        r = (z - self.w * np.conj(z)) * (2.0 / self.p)
        return (self.D.T @ r.T).T

    @cached_property
    def _scaling(self) -> np.ndarray:
        # symmetric diagonal equilibration; keeps rows/cols of A comparable
        amax = np.sqrt(np.asarray(abs(self.A).max(axis=1).todense()).ravel())
        amax[amax == 0] = 1.0
        return 1.0 / amax

    @cached_property
    def _lu(self):
        s = sp.diags(self._scaling)
        As = (s @ self.A @ s).tocsc()
        try:
            lu = spla.splu(As)
        except RuntimeError as exc:
            raise NonIdentifiable(f"system matrix is singular: {exc}", 0.0) from None
        if not np.all(np.isfinite(lu.U.data)):
            raise NonIdentifiable("system matrix is singular", 0.0)
        norm_a = spla.norm(As, 1)
        if As.shape[0] <= 400:
            norm_inv = np.abs(lu.solve(np.eye(As.shape[0], dtype=complex))).sum(axis=0).max()
        else:
            inv = spla.LinearOperator(As.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="H"),
                                      dtype=complex)
            norm_inv = spla.onenormest(inv)
        rcond = 1.0 / (norm_a * norm_inv) if np.isfinite(norm_inv) and norm_inv > 0 else 0.0
        if not rcond >= RCOND_MIN:
            raise NonIdentifiable("system matrix is numerically singular; the state is not identifiable "
                                  "from these measurements", rcond)
        self.rcond = rcond
        return lu

    def solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        s = self._scaling
        rhs = np.asarray(rhs, dtype=complex)
        if rhs.ndim == 1:
            return s * self._lu.solve(s * rhs)
        return s[:, None] * self._lu.solve(s[:, None] * rhs)

    @cached_property
    def F11_bar(self) -> np.ndarray:
        n2 = 2 * self.N
        rhs = np.zeros((self.A.shape[0], n2), dtype=complex)
        rhs[:n2, :n2] = np.eye(n2)
        return self.solve_rhs(rhs)[:n2]

    @property
    def F1(self) -> np.ndarray:
        return self.F11_bar[: self.N, : self.N]

    @property
    def F2(self) -> np.ndarray:
        return self.F11_bar[: self.N, self.N :]

    @cached_property
    def _constraint_offset(self) -> np.ndarray:
        """``F12bar cbar`` restricted to the x-part (zero when c = 0)."""
        n2 = 2 * self.N
        rhs = np.zeros(self.A.shape[0], dtype=complex)
        rhs[n2:] = np.r_[self.c, np.conj(self.c)]
        if not np.any(rhs):
            return np.zeros(self.N, dtype=complex)
        return self.solve_rhs(rhs)[: self.N]

    def estimate(self, z: np.ndarray) -> np.ndarray:
        """ML estimates for a batch of measurement vectors, shape ``(R, K) -> (R, N)``."""
        g = self.g_of(z)
        return g @ self.F1.T + np.conj(g) @ self.F2.T + self._constraint_offset


def assemble(z, sigma1, sigma2, D, C, c=None, psd_tol: float = 1e-12) -> AugmentedSystem:
    """Build ``G1, G2, g`` and the block matrix ``A`` for diagonal covariances.

    ``z`` may be ``None`` when only the covariance structure is needed.
    """
    D = sp.csr_matrix(D, dtype=float) if not sp.issparse(D) else D.tocsr()
    C = sp.csr_matrix(C, dtype=complex) if not sp.issparse(C) else C.tocsr().astype(complex)
    K, N = D.shape
    Q = C.shape[0]
    if C.shape[1] != N:
        raise ValueError(f"C has {C.shape[1]} columns, D has {N}")
    c = np.zeros(Q, dtype=complex) if c is None else np.asarray(c, dtype=complex)
    s1 = np.asarray(sigma1, dtype=float).reshape(-1)
    s2 = np.asarray(sigma2, dtype=complex).reshape(-1)
    if s1.shape != (K,) or s2.shape != (K,):
        raise ValueError(f"covariance diagonals must have length K={K}")
    if c.shape != (Q,):
        raise ValueError(f"c must have length Q={Q}")
    if np.any(s1 <= 0):
        raise EstimationError("Sigma1 has a zero or negative diagonal entry")
    p = s1 - np.abs(s2) ** 2 / s1
    if np.any(p <= psd_tol * s1):
        bad = int(np.argmin(p / s1))
        raise EstimationError(f"P is not positive definite at measurement {bad}: |sigma2| >= sigma1")
    w = s2 / s1
    Dh = D.T.tocsr()
    G1 = (2.0 * Dh @ sp.diags(1.0 / p) @ D).tocsr().astype(complex)
    G2 = (-2.0 * Dh @ sp.diags(w / p) @ D).tocsr()
    C_bar = sp.block_diag([C, C.conj()], format="csc")
    A = sp.bmat([[_augment(G1, G2), C_bar.conj().T], [C_bar, None]], format="csc")
    A.resize((2 * (N + Q), 2 * (N + Q)))
    sys = AugmentedSystem(D, C, c, p, w, None, G1, G2, None, A)
    if z is not None:
        z = np.asarray(z, dtype=complex)
        if z.shape != (K,):
            raise ValueError(f"z must have length K={K}")
        sys.z = z
        sys.g = sys.g_of(z)
    return sys


@dataclass(frozen=True)
class ConfidenceEllipse:
    center: complex
    angle: float
    semi_major: float
    semi_minor: float
    alpha: float
    cov: np.ndarray = field(repr=False, compare=False)


@dataclass(eq=False)
class EstimateResult:
    x_hat: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    lagrange: np.ndarray
    system: AugmentedSystem = field(repr=False)

    @property
    def N(self) -> int:
        return self.x_hat.shape[0]

    @cached_property
    def covariances(self) -> np.ndarray:
        return covariance_blocks(self.F1, self.F2)

    def stationarity_residual(self) -> float:
        sys = self.system
        grad = -sys.g + sys.G1 @ self.x_hat + sys.G2 @ np.conj(self.x_hat) + sys.C.conj().T @ self.lagrange
        return float(np.linalg.norm(grad) / max(np.linalg.norm(sys.g), np.finfo(float).tiny))

    def constraint_residual(self) -> float:
        sys = self.system
        r = sys.C @ self.x_hat - sys.c
        scale = max(float(np.max(np.abs(self.x_hat))), 1.0)
        return float(np.max(np.abs(r), initial=0.0) / scale)


def solve(sys: AugmentedSystem) -> EstimateResult:
    """``xbar_hat = F11bar gbar + F12bar cbar`` via the sparse factorization of ``A``."""
    if sys.g is None:
        raise ValueError("system was assembled without measurements")
    N = sys.N
    rhs = np.r_[sys.g, np.conj(sys.g), sys.c, np.conj(sys.c)]
    sol = sys.solve_rhs(rhs)
    x_bar = sol[: 2 * N]
    lam = sol[2 * N : 2 * N + sys.Q]
    x_hat = x_bar[:N]
    asym = np.max(np.abs(x_bar[N:] - np.conj(x_hat)), initial=0.0)
    if asym > 1e-8 * max(np.max(np.abs(x_hat)), 1.0):
        raise NonIdentifiable(f"augmented solution lost conjugate symmetry ({asym:.2e})", sys.rcond)
    return EstimateResult(x_hat, sys.F1, sys.F2, lam, sys)


def covariance_blocks(F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """Real 2x2 covariance of ``(Re x_i, Im x_i)`` for every index, shape ``(N, 2, 2)``."""
    f1 = np.diagonal(F1)
    f2 = np.diagonal(F2)
    cov = np.empty((f1.shape[0], 2, 2))
    cov[:, 0, 0] = (f1 + f2).real
    cov[:, 0, 1] = (-f1 + f2).imag
    cov[:, 1, 0] = (f1 + f2).imag
    cov[:, 1, 1] = (f1 - f2).real
    asym = np.abs(cov[:, 0, 1] - cov[:, 1, 0])
    scale = np.maximum(np.abs(cov[:, 0, 0]) + np.abs(cov[:, 1, 1]), np.finfo(float).tiny)
    worst = float(np.max(asym / scale, initial=0.0))
    if worst > 1e-12:
        # off-diagonals differ by 2 Im(F1_ii), which is round-off for a Hermitian F1
        log.warning("symmetrizing per-index covariances (max relative asymmetry %.2e)", worst)
    off = (cov[:, 0, 1] + cov[:, 1, 0]) / 2.0
    cov[:, 0, 1] = off
    cov[:, 1, 0] = off
    return cov


def estimator_covariance(result: EstimateResult) -> np.ndarray:
    return result.covariances


def max_covariance_asymmetry(result: EstimateResult) -> float:
    """Largest relative asymmetry of the raw 2x2 blocks before symmetrization."""
    f1 = np.diagonal(result.F1)
    f2 = np.diagonal(result.F2)
    asym = np.abs((-f1 + f2).imag - (f1 + f2).imag)
    scale = np.maximum(np.abs((f1 + f2).real) + np.abs((f1 - f2).real), np.finfo(float).tiny)
    return float(np.max(asym / scale, initial=0.0))


def real_covariance(result: EstimateResult) -> np.ndarray:
    """``2 F11bar`` mapped to the real vector ``(Re x, Im x)``, shape ``(2N, 2N)``."""
    F1, F2 = result.F1, result.F2
    rr = (F1 + F2).real
    ii = (F1 - F2).real
    ri = (F2 - F1).imag
    out = np.block([[rr, ri], [ri.T, ii]])
    return (out + out.T) / 2.0


def empirical_covariance(samples: np.ndarray) -> np.ndarray:
    """Sample covariance of complex estimates ``(R, N)`` in the real ``(Re, Im)`` layout."""
    samples = np.asarray(samples)
    r = np.concatenate([samples.real, samples.imag], axis=1)
    return np.cov(r, rowvar=False)


def confidence_interval(result: EstimateResult, i: int, alpha: float) -> tuple[float, float, float, float]:
    """Marginal ``1 - alpha`` intervals for the real and imaginary part of ``x_i``."""
    zq = two_sided_z(alpha)
    f1 = result.F1[i, i]
    f2 = result.F2[i, i]
    var_re = (f1 + f2).real
    var_im = (f1 - f2).real
    if var_re < -DEGENERATE_TOL or var_im < -DEGENERATE_TOL:
        raise CovarianceInconsistency(f"negative marginal variance at index {i}")
    hr = zq * np.sqrt(max(var_re, 0.0))
    hi = zq * np.sqrt(max(var_im, 0.0))
    x = result.x_hat[i]
    return (x.real - hr, x.real + hr, x.imag - hi, x.imag + hi)


def ellipse_from_covariance(center: complex, cov: np.ndarray, alpha: float) -> ConfidenceEllipse:
    cov = np.asarray(cov, dtype=float)
    vals, vecs = np.linalg.eigh(cov)
    e2, e1 = np.clip(vals, 0.0, None)
    v1, v2 = vecs[:, 1]
    if v1 < 0 or (v1 == 0 and v2 < 0):
        v1, v2 = -v1, -v2
    if np.isclose(e1, e2, rtol=0.0, atol=DEGENERATE_TOL * max(e1, 1.0)):
        angle = 0.0
    elif v1 == 0:
        angle = np.pi / 2
    else:
        angle = float(np.arctan(v2 / v1))
    q = chi2_2_ppf_upper(alpha)
    return ConfidenceEllipse(complex(center), angle, float(np.sqrt(e1 * q)), float(np.sqrt(e2 * q)),
                             float(alpha), cov)


def confidence_ellipse(result: EstimateResult, i: int, alpha: float) -> ConfidenceEllipse:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return ellipse_from_covariance(result.x_hat[i], result.covariances[i], alpha)


def mahalanobis_sq(cov: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance of complex offsets under real 2x2 covariances.

    ``cov`` is ``(..., 2, 2)`` and broadcasts against ``delta``. Along a
    degenerate axis (eigenvalue below ``1e-12`` times the largest) the distance
    is infinite unless the offset component is zero to the same tolerance.
    """
    cov = np.asarray(cov, dtype=float)
    delta = np.asarray(delta, dtype=complex)
    vals, vecs = np.linalg.eigh(cov)
    d = np.stack([delta.real, delta.imag], axis=-1)
    proj = np.einsum("...j,...jk->...k", d, vecs)
    top = np.max(vals, axis=-1, keepdims=True)
    degenerate = vals <= DEGENERATE_TOL * np.maximum(top, np.finfo(float).tiny)
    safe = np.where(degenerate, 1.0, vals)
    terms = np.where(degenerate, 0.0, proj**2 / safe)
    scale = np.sqrt(np.maximum(top, 0.0)) + np.abs(d).max(axis=-1, keepdims=True) + 1.0
    off_axis = degenerate & (np.abs(proj) > DEGENERATE_TOL * scale)
    out = terms.sum(axis=-1)
    return np.where(off_axis.any(axis=-1), np.inf, out)


def ellipse_contains(ellipse: ConfidenceEllipse, point) -> bool | np.ndarray:
    q = chi2_2_ppf_upper(ellipse.alpha)
    d2 = mahalanobis_sq(ellipse.cov, np.asarray(point, dtype=complex) - ellipse.center)
    return d2 <= q if np.ndim(d2) else bool(d2 <= q)


@dataclass(frozen=True)
class CrlbVerdict:
    """Comparison of an empirical covariance against ``2 F11bar``.

    Eigenvalues are those of the difference after whitening by the bound on
    its range (dimension ``dof``), so they read as relative excess variance.
    """

    min_eigenvalue: float
    max_eigenvalue: float
    tolerance: float
    dof: int
    n_samples: int

    @property
    def satisfied(self) -> bool:
        return self.min_eigenvalue >= -self.tolerance

    @property
    def attained(self) -> bool:
        return self.satisfied and self.max_eigenvalue <= self.tolerance

    @property
    def margin(self) -> float:
        return self.max_eigenvalue

    @property
    def verdict(self) -> str:
        if not self.satisfied:
            return "violated"
        return "attained" if self.attained else "above bound"


def crlb_check(result: EstimateResult, empirical_cov: np.ndarray, n_samples: int) -> CrlbVerdict:
    """Test ``empirical_cov - 2 F11bar >= 0`` (real ``(Re, Im)`` layout).

    The bound is singular along constraint directions, so the comparison is
    made on its range after whitening. There a sample covariance of Gaussian
    estimates that attain the bound has eigenvalues spread around 1 with
    scale ``sqrt((dof + 1) / (R - 1))``; the tolerance is three times that.
    """
    bound = real_covariance(result)
    emp = np.asarray(empirical_cov, dtype=float)
    if emp.shape != bound.shape:
        raise ValueError(f"empirical covariance has shape {emp.shape}, expected {bound.shape}")
    vals, vecs = np.linalg.eigh(bound)
    keep = vals > 1e-9 * vals.max()
    U = vecs[:, keep] / np.sqrt(vals[keep])
    diff = U.T @ (emp - bound) @ U
    ev = np.linalg.eigvalsh((diff + diff.T) / 2.0)
    dof = int(keep.sum())
    se = np.sqrt((dof + 1) / max(n_samples - 1, 1))
    return CrlbVerdict(float(ev[0]), float(ev[-1]), float(3.0 * se), dof, int(n_samples))


def result_records(result: EstimateResult, labels, alpha: float) -> list[dict]:
    """One record per state index: estimate, 2x2 covariance and ``1 - alpha`` ellipse."""
    out = []
    for i, (ident, kind) in enumerate(labels):
        ell = confidence_ellipse(result, i, alpha)
        x = result.x_hat[i]
        out.append({
            "id": ident,
            "kind": kind,
            "re": float(x.real),
            "im": float(x.imag),
            "cov": ell.cov.tolist(),
            "ellipse": {"angle": ell.angle, "a": ell.semi_major, "b": ell.semi_minor},
        })
    return out


def write_result_json(path, result: EstimateResult, labels, alpha: float) -> None:
    with open(path, "w") as fh:
        json.dump({"alpha": alpha, "estimates": result_records(result, labels, alpha)}, fh, indent=2)


def write_result_csv(path, result: EstimateResult, labels, alpha: float) -> None:
    """Flat form for plotting: one row per index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "re", "im", "cov_rr", "cov_ri", "cov_ii", "angle", "a", "b"])
        for rec in result_records(result, labels, alpha):
            (rr, ri), (_, ii) = rec["cov"]
            e = rec["ellipse"]
            w.writerow([rec["id"], rec["kind"], repr(rec["re"]), repr(rec["im"]), repr(rr), repr(ri), repr(ii),
                        repr(e["angle"]), repr(e["a"]), repr(e["b"])])
