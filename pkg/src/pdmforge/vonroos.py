"""Independent check of constructed systems on a grid.

The Hermitian ordering H = -d/dx (1/M) d/dx + V_eff is discretized in flux
form with Dirichlet ends, giving a symmetric tridiagonal matrix.  Its
lowest eigenvalues come from Sturm-sequence bisection and its eigenvectors
from inverse iteration.  :func:`veff_from_vonroos` maps a bare potential to
V_eff for a given (alpha, beta, gamma) kinetic ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, solve_banded

from .errors import BoundaryLeakError, ConstructionError, DomainError, SolverError
from .field import MassProfile, SmoothMap1D
from .pct import ConstructedSystem, Grid1D, PerturbationResult

SOLVER_TOL = 1e-10
BOUNDARY_TOL = 1e-10
ENERGY_RTOL = 1e-3
OVERLAP_MIN = 0.9999
INVERSE_ITERATION_CAP = 50


@dataclass(frozen=True)
class VonRoosParams:
    """Kinetic ordering parameters (alpha, beta, gamma) = (a, b, c), a+b+c = -1."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        total = self.a + self.b + self.c
        if not math.isclose(total, -1.0, rel_tol=0.0, abs_tol=1e-12):
            raise DomainError(f"ordering parameters must sum to -1, got {total!r}")

    @classmethod
    def ben_daniel_duke(cls) -> "VonRoosParams":
        return cls(0.0, -1.0, 0.0)


def veff_from_vonroos(V, M: MassProfile, p: VonRoosParams, x):
    """V + (b+1)/2 M''/M^2 - [a(a+b+1) + b + 1] M'^2/M^3."""
    x = np.asarray(x, dtype=float)
    m = M.m
    if not m.contains(x):
        raise DomainError(f"x outside the domain of the mass {m.label}")
    v = V(x) if callable(V) else np.asarray(V, dtype=float)
    mv = m(x)
    c2 = 0.5 * (p.b + 1.0)
    c1 = p.a * (p.a + p.b + 1.0) + p.b + 1.0
    return v + c2 * m.ratio2(x) / mv - c1 * m.ratio1(x) ** 2 / mv


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix; one off-diagonal array keeps it symmetric.

    When built by :func:`discretize`, rows are the interior grid points
    x_1..x_{N-2}; the end points carry the Dirichlet zeros.
    """

    diag: np.ndarray
    off: np.ndarray
    grid: Optional[Grid1D] = None

    def __post_init__(self):
        d = np.ascontiguousarray(self.diag, dtype=float)
        e = np.ascontiguousarray(self.off, dtype=float)
        if d.ndim != 1 or e.shape != (max(d.size - 1, 0),):
            raise DomainError("off-diagonal must have exactly one entry fewer than the diagonal")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ConstructionError("operator has non-finite entries")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "off", e)

    @property
    def size(self) -> int:
        return self.diag.size

    @property
    def weight(self) -> float:
        return self.grid.dx if self.grid is not None else 1.0

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def norm_inf(self) -> float:
        row = np.abs(self.diag).copy()
        row[:-1] += np.abs(self.off)
        row[1:] += np.abs(self.off)
        return float(row.max())

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)


def discretize(M: MassProfile, Veff, grid: Grid1D) -> TridiagonalOperator:
    """Flux-form stencil with a_{i+1/2} = 1/M(x_i + dx/2):
    diag_i = (a_{i-1/2} + a_{i+1/2})/dx^2 + Veff_i, off_i = -a_{i+1/2}/dx^2."""
    x = grid.x
    veff = np.asarray(Veff, dtype=float)
    if veff.shape != x.shape:
        raise DomainError(f"Veff has shape {veff.shape}, grid has {x.shape}")
    mid = 0.5 * (x[:-1] + x[1:])
    mass = M.m(mid)
    if not np.all(np.isfinite(mass)) or np.any(mass <= 0.0):
        raise ConstructionError("mass is not positive at every grid midpoint")
    a = 1.0 / mass
    dx2 = grid.dx**2
    diag = (a[:-1] + a[1:]) / dx2 + veff[1:-1]
    off = -a[1:-1] / dx2
    return TridiagonalOperator(diag, off, grid)


# -- Sturm sequences ---------------------------------------------------------


@njit(cache=True)
def _sturm_count(diag, off2, sigma, pivmin):
    """Number of eigenvalues below sigma from the pivots of T - sigma I = L D L^T."""
    count = 0
    q = diag[0] - sigma
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0.0:
        count += 1
    for i in range(1, diag.size):
        q = diag[i] - sigma - off2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0.0:
            count += 1
    return count


@njit(cache=True)
def _sturm_count_signs(diag, off2, sigma):
    """Sign changes in the leading-minor sequence p_0 = 1, p_i = det(T_i - sigma I).

    Uses the three-term recurrence with joint rescaling of (p_{i-1}, p_i);
    a zero minor takes the sign opposite to its predecessor.
    """
    changes = 0
    p_prev = 1.0
    s_prev = 1.0
    p = diag[0] - sigma
    for i in range(diag.size):
        if i > 0:
            p_new = (diag[i] - sigma) * p - off2[i - 1] * p_prev
            p_prev = p
            p = p_new
        s = -s_prev if p == 0.0 else (1.0 if p > 0.0 else -1.0)
        if s != s_prev:
            changes += 1
        s_prev = s
        big = abs(p)
        if big != 0.0 and (big > 1e100 or big < 1e-100):
            p_prev /= big
            p /= big
    return changes


@njit(cache=True)
def _bisect(diag, off2, j, lo, hi, tol, pivmin):
    while True:
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)) or mid <= lo or mid >= hi:
            return lo, hi
        if _sturm_count(diag, off2, mid, pivmin) <= j:
            lo = mid
        else:
            hi = mid


def sturm_count(T: TridiagonalOperator, sigma: float) -> int:
    """Number of eigenvalues of T strictly below sigma."""
    off2 = T.off**2
    return int(_sturm_count(T.diag, off2, float(sigma), _pivmin(off2)))


def sturm_count_signs(T: TridiagonalOperator, sigma: float) -> int:
    return int(_sturm_count_signs(T.diag, T.off**2, float(sigma)))


def _pivmin(off2):
    top = float(off2.max()) if off2.size else 1.0
    return np.finfo(float).tiny * max(1.0, top)


def gershgorin(T: TridiagonalOperator):
    r = np.zeros(T.size)
    r[:-1] += np.abs(T.off)
    r[1:] += np.abs(T.off)
    return float(np.min(T.diag - r)), float(np.max(T.diag + r))


@dataclass(frozen=True)
class EigenSolution:
    """Lowest eigenpairs; vectors are rows with weight * sum(v^2) = 1."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    weight: float = 1.0

    def gram(self) -> np.ndarray:
        return self.weight * self.vectors @ self.vectors.T

    def padded(self) -> np.ndarray:
        """Vectors with the Dirichlet end zeros restored (full-grid rows)."""
        k, m = self.vectors.shape
        out = np.zeros((k, m + 2))
        out[:, 1:-1] = self.vectors
        return out


def _inverse_iteration(T, lam, j, tol, previous, prev_values, rng):
    n = T.size
    ab = np.zeros((3, n))
    ab[0, 1:] = T.off
    ab[1] = T.diag - lam
    ab[2, :-1] = T.off
    cluster = [v for v, mu in zip(previous, prev_values) if abs(mu - lam) <= 1e-3 * max(1.0, abs(lam))]
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for sweep in range(INVERSE_ITERATION_CAP):
        try:
            w = solve_banded((1, 1), ab, v, check_finite=False)
        except LinAlgError:
            ab[1] = T.diag - (lam + tol * max(1.0, abs(lam)))
            continue
        for u in cluster:
            w -= (u @ w) * u
        w /= np.linalg.norm(w)
        if w @ v < 0.0:
            w = -w
        if np.linalg.norm(w - v) <= 1e-12:
            return w
        v = w
    raise SolverError(f"inverse iteration for level {j} did not converge in {INVERSE_ITERATION_CAP} sweeps")


def eigs_lowest(T: TridiagonalOperator, k: int, solver_tol: float = SOLVER_TOL) -> EigenSolution:
    """The ``k`` lowest eigenpairs of T.

    Eigenvalues are bisected inside the Gershgorin interval until the
    bracket is below ``solver_tol * max(1, |lambda|)``; each final bracket is
    cross-checked with the leading-minor sign count.  Eigenvectors come from
    inverse iteration at the converged shift (at most
    ``INVERSE_ITERATION_CAP`` sweeps), orthogonalized within clusters.
    """
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k!r}")
    limit = T.size if T.grid is None else T.grid.n_points // 4
    if k > limit:
        raise DomainError(f"k={k} exceeds the resolvable count {limit} (N/4)")
    off2 = T.off**2
    pivmin = _pivmin(off2)
    glo, ghi = gershgorin(T)
    span = max(abs(glo), abs(ghi), 1.0)
    glo -= 2.0 * np.finfo(float).eps * span + pivmin
    ghi += 2.0 * np.finfo(float).eps * span + pivmin

    values = np.empty(k)
    lo = glo
    for j in range(k):
        a, b = _bisect(T.diag, off2, j, lo, ghi, solver_tol, pivmin)
        for s in (a, b):
            if _sturm_count(T.diag, off2, s, pivmin) != _sturm_count_signs(T.diag, off2, s):
                raise SolverError(f"Sturm count disagreement at shift {s!r} (level {j})")
        values[j] = 0.5 * (a + b)
        lo = a

    rng = np.random.default_rng(20240611)
    vectors = []
    for j in range(k):
        vectors.append(_inverse_iteration(T, values[j], j, solver_tol, vectors, values[:j], rng))
    V = np.array(vectors)
    w = T.weight
    V /= np.sqrt(w)
    residuals = np.array([
        math.sqrt(w) * np.linalg.norm(T.matvec(v) - lam * v) for v, lam in zip(V, values)
    ])
    return EigenSolution(values=values, vectors=V, residuals=residuals, weight=w)


# -- verification ----------------------------------------------------------


@dataclass(frozen=True)
class LevelReport:
    n: int
    analytic: float
    numeric: float
    rel_gap: float
    overlap: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    levels: list
    eigen: EigenSolution
    energy_rtol: float
    overlap_min: float

    @property
    def passed(self) -> bool:
        return all(lv.passed for lv in self.levels)

    @property
    def max_rel_gap(self) -> float:
        return max(lv.rel_gap for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "energy_rtol": self.energy_rtol,
            "overlap_min": self.overlap_min,
            "max_rel_gap": self.max_rel_gap,
            "levels": [lv.__dict__.copy() for lv in self.levels],
        }


def check_boundary(psi, boundary_tol: float = BOUNDARY_TOL, label: str = "state"):
    psi = np.asarray(psi, dtype=float)
    peak = np.max(np.abs(psi))
    edge = max(abs(psi[0]), abs(psi[-1]))
    if not edge <= boundary_tol * peak:
        raise BoundaryLeakError(
            f"{label} is {edge / peak:.3e} of its peak at the grid edge "
            f"(limit {boundary_tol:.1e}); widen the window"
        )


def _compare(T, eig, grid, states, targets, labels, energy_rtol, overlap_min):
    dx = grid.dx
    levels = []
    for j, (psi, E, lab) in enumerate(zip(states, targets, labels)):
        lam = float(eig.values[j])
        inner = np.asarray(psi, dtype=float)[1:-1]
        overlap = abs(dx * float(inner @ eig.vectors[j]))
        gap = abs(lam - E) / abs(E) if E != 0.0 else abs(lam)
        resid = math.sqrt(dx) * float(np.linalg.norm(T.matvec(inner) - E * inner))
        levels.append(LevelReport(
            n=int(lab), analytic=float(E), numeric=lam, rel_gap=gap, overlap=overlap,
            residual=resid, passed=bool(gap <= energy_rtol and overlap >= overlap_min),
        ))
    return levels


def verify_system(
    sys: ConstructedSystem,
    k: Optional[int] = None,
    solver_tol: float = SOLVER_TOL,
    boundary_tol: float = BOUNDARY_TOL,
    energy_rtol: float = ENERGY_RTOL,
    overlap_min: float = OVERLAP_MIN,
) -> VerificationReport:
    """Solve H = -d/dx (1/M) d/dx + V with the constructed V and compare the
    lowest ``k`` eigenpairs with the analytic E_n and psi_n.

    A level passes when |lambda_n - E_n|/|E_n| <= energy_rtol and
    |<psi_n, v_n>| >= overlap_min.  The residual ||T psi_n - E_n psi_n|| over
    interior points is reported but does not gate.
    """
    k = sys.n_max + 1 if k is None else k
    if int(k) != k or not 1 <= k <= sys.n_max + 1:
        raise DomainError(f"k must lie in 1..{sys.n_max + 1}, got {k!r}")
    for n in range(k):
        check_boundary(sys.psi[n], boundary_tol, f"psi_{n}")
    T = discretize(sys.inputs.M, sys.V, sys.grid)
    eig = eigs_lowest(T, k, solver_tol)
    levels = _compare(T, eig, sys.grid, sys.psi[:k], sys.E[:k], range(k), energy_rtol, overlap_min)
    return VerificationReport(levels, eig, energy_rtol, overlap_min)


def count_nodes(psi, rel_floor: float = 1e-8) -> int:
    """Sign changes among samples above rel_floor * max|psi|."""
    psi = np.asarray(psi, dtype=float)
    big = psi[np.abs(psi) > rel_floor * np.max(np.abs(psi))]
    return int(np.count_nonzero(np.sign(big[:-1]) != np.sign(big[1:])))


def verify_perturbation(
    sys: ConstructedSystem,
    pert: PerturbationResult,
    solver_tol: float = SOLVER_TOL,
    boundary_tol: float = BOUNDARY_TOL,
    energy_rtol: float = ENERGY_RTOL,
    overlap_min: float = OVERLAP_MIN,
) -> VerificationReport:
    """Check that psi_ext is an eigenstate of V + dV at E_n + dE.

    The level index of psi_ext is its node count.
    """
    if not np.all(pert.valid):
        raise DomainError("perturbation has masked (node) points; cannot verify on the full grid")
    check_boundary(pert.psi_ext, boundary_tol, "psi_ext")
    level = count_nodes(pert.psi_ext)
    target = float(sys.E[pert.n] + pert.deltaE)
    T = discretize(sys.inputs.M, sys.V + pert.deltaV, sys.grid)
    eig = eigs_lowest(T, level + 1, solver_tol)
    sub = EigenSolution(eig.values[level:], eig.vectors[level:], eig.residuals[level:], eig.weight)
    levels = _compare(T, sub, sys.grid, [pert.psi_ext], [target], [level], energy_rtol, overlap_min)
    return VerificationReport(levels, eig, energy_rtol, overlap_min)


def solve_direct(
    M: MassProfile,
    V,
    params: VonRoosParams,
    grid: Grid1D,
    k: int,
    solver_tol: float = SOLVER_TOL,
):
    """V_eff from the ordering parameters, then the lowest ``k`` eigenpairs."""
    veff = veff_from_vonroos(V, M, params, grid.x)
    T = discretize(M, veff, grid)
    return veff, eigs_lowest(T, k, solver_tol)
