"""Point-canonical-transformation engine for position-dependent masses.

A system is specified by a mass M(x), a coordinate map g(x) and a
spectral family F_n(g).  The wavefunction ansatz is psi = f(x) F(g(x)) h(x):

* :func:`rhs_solvable` evaluates W_n(x) = E_n - V(x) implied by the
  triple, and :func:`split_energy_potential` separates it into an
  n-independent potential and x-independent energies (or refuses);
* :func:`delta_rhs_eq10` and :func:`delta_rhs_eq13` give
  D(x) = dE - dV(x) produced by a moderating factor h = exp(1/2 int dQ dg),
  in the dQ form and in the h form respectively;
* :func:`apply_deltaQ` and :func:`deltaQ_2_over_g` turn a dQ generator
  into a perturbed (or new solvable) system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConstructionError,
    DegenerateSupportError,
    DomainError,
    InconsistencyError,
    NodeProximityError,
    UsageError,
)
from .field import (
    CoordinateMap,
    MassProfile,
    SmoothMap1D,
    affine,
    constant,
    cumulative_integral,
    integrate,
    make_exp_map,
    power,
)
from .specfam import (
    NODE_GUARD,
    SpectralFamily,
    dressed_hermite_family,
    dressed_laguerre_family,
    log_deriv_F,
)

SPLIT_TOL = 1e-8
LOGDERIV_RTOL = 1e-8


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n_points`` samples on [x_lo, x_hi], endpoints included."""

    x_lo: float
    x_hi: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.x_lo) and math.isfinite(self.x_hi)) or not self.x_hi > self.x_lo:
            raise DomainError(f"grid needs finite x_hi > x_lo, got [{self.x_lo}, {self.x_hi}]")
        if int(self.n_points) != self.n_points or self.n_points < 16:
            raise DomainError(f"grid needs at least 16 points, got {self.n_points!r}")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, int(self.n_points))

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_points - 1)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.x_lo + self.x_hi)

    def refined(self) -> "Grid1D":
        """Same window with the spacing halved."""
        return Grid1D(self.x_lo, self.x_hi, 2 * self.n_points - 1)


def trapezoid_norm(psi, dx: float) -> float:
    return float(np.sqrt(np.trapezoid(np.asarray(psi) ** 2, dx=dx)))


@dataclass(frozen=True)
class PctInputs:
    M: MassProfile
    g: CoordinateMap
    fam: SpectralFamily
    grid: Grid1D

    def __post_init__(self):
        ends = [self.grid.x_lo, self.grid.x_hi]
        for name, u in (("mass", self.M.m), ("coordinate map", self.g.g)):
            if not u.contains(ends):
                raise DomainError(
                    f"{name} {u.label} domain [{u.lo}, {u.hi}] does not cover the grid "
                    f"[{self.grid.x_lo}, {self.grid.x_hi}]"
                )
        if not self.fam.contains(self.g.g(self.grid.x)):
            raise DomainError(
                f"g(x) leaves the domain ({self.fam.g_lo}, {self.fam.g_hi}) of "
                f"{self.fam.name} on the grid"
            )


@dataclass(frozen=True)
class ConstructedSystem:
    """A solvable system sampled on its grid.

    ``V`` is the effective potential entering H = -d/dx (1/M) d/dx + V.
    ``psi`` has one trapezoid-normalized row per level.
    """

    inputs: PctInputs
    V: np.ndarray
    E: np.ndarray
    psi: np.ndarray
    gauge_note: str
    split_residual: np.ndarray
    kind: str = "generic"
    params: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid1D:
        return self.inputs.grid

    @property
    def x(self) -> np.ndarray:
        return self.inputs.grid.x

    @property
    def n_max(self) -> int:
        return len(self.E) - 1


@dataclass(frozen=True)
class DeltaQ:
    """A dQ(g) generator with its g-derivatives.

    ``energy_rule(system, n)`` returns the closed-form energy shift when one
    is known for that system, else None (the dE = 0 gauge is then used).
    """

    label: str
    q: SmoothMap1D
    energy_rule: Optional[Callable] = None

    def __call__(self, g):
        return self.q(g)


@dataclass(frozen=True)
class PerturbationResult:
    deltaQ_label: str
    n: int
    h: np.ndarray
    log_h: np.ndarray
    deltaV: np.ndarray
    deltaE: float
    psi_ext: np.ndarray
    D: np.ndarray
    valid: np.ndarray
    gauge_note: str
    x_ref: float
    logderiv_residual: Optional[float] = None


# -- the f factor -----------------------------------------------------------


def f_log_derivative(M: MassProfile, g: CoordinateMap, fam: SpectralFamily, x):
    """f'/f = 1/2 (M'/M - g''/g') + 1/2 Q(g) g'."""
    m, gm = M.m, g.g
    out = 0.5 * (m.ratio1(x) - gm.d2(x) / gm.d1(x))
    if not fam.q_zero:
        out = out + 0.5 * fam.Q(gm(x)) * gm.d1(x)
    return out


def _q_exponent(g: CoordinateMap, fam: SpectralFamily, x, x_ref):
    if fam.q_zero:
        return np.zeros(np.shape(x))
    g_ref = float(g.g(x_ref))
    vals = [0.5 * integrate(fam.Q, g_ref, float(g.g(t))) for t in np.atleast_1d(x)]
    return np.reshape(vals, np.shape(x))


def build_f(M: MassProfile, g: CoordinateMap, fam: SpectralFamily, x, x_ref=None):
    """f = |M/g'|^(1/2) exp(1/2 int_{g(x_ref)}^{g(x)} Q dy).

    The absolute value keeps f real when g decreases (M = lambda g' with
    lambda < 0); only |M/g'| = 0 or non-finite is rejected.  The
    exponential factor equals 1 at ``x_ref`` (default: middle of g's domain).
    """
    x = np.asarray(x, dtype=float)
    ratio = M.m(x) / g.g.d1(x)
    if np.any(~np.isfinite(ratio)) or np.any(ratio == 0.0):
        raise ConstructionError(
            f"M/g' vanishes or is non-finite for M={M.m.label}, g={g.g.label}"
        )
    if x_ref is None:
        x_ref = 0.5 * (g.g.lo + g.g.hi)
    out = np.sqrt(np.abs(ratio)) * np.exp(_q_exponent(g, fam, x, x_ref))
    return out if out.ndim else float(out)


def log_f(M: MassProfile, g: CoordinateMap, fam: SpectralFamily, x, x_ref=None):
    x = np.asarray(x, dtype=float)
    if x_ref is None:
        x_ref = 0.5 * (g.g.lo + g.g.hi)
    return 0.5 * np.log(np.abs(M.m(x) / g.g.d1(x))) + _q_exponent(g, fam, x, x_ref)


# -- solvable branch -------------------------------------------------------


def rhs_solvable(inp: PctInputs, n: int, x):
    """W_n(x) = E_n - V(x) implied by (M, g, F_n):

    g'''/(2Mg') - 3/(4M) (g''/g')^2 + g'^2/M [R_n - Q_g/2 - Q^2/4]
    - M''/(2M^2) + 3M'^2/(4M^3).
    """
    x = np.asarray(x, dtype=float)
    gm, m = inp.g.g, inp.M.m
    gv = gm(x)
    if not inp.fam.contains(gv):
        raise DomainError(f"g(x) outside the domain of {inp.fam.name}")
    g1, g2, g3 = gm.d1(x), gm.d2(x), gm.d3(x)
    mv = m(x)
    bracket = inp.fam.R(n, gv)
    if not inp.fam.q_zero:
        q = inp.fam.Q(gv)
        bracket = bracket - 0.5 * inp.fam.dQ(gv) - 0.25 * q * q
    # mass/Jacobian terms grouped as (1/M) * [ratios]: for exponential maps the
    # ratios are x-independent and cancel without an e^{|x|}-sized remainder
    mu1, mu2 = m.ratio1(x), m.ratio2(x)
    jac = 0.5 * (g3 / g1) - 0.75 * (g2 / g1) ** 2 - 0.5 * mu2 + 0.75 * mu1**2
    return jac / mv + g1**2 / mv * bracket


def level_split_residual(W, E, scaled: bool = True) -> np.ndarray:
    """Per level: max_x |(W_n - W_0) - (E_n - E_0)|.

    With ``scaled`` each point is divided by max(1, |W_0(x)|, |W_n(x)|), so
    the figure stays meaningful where W reaches ~1e10 and a float64 ulp of
    W alone exceeds 1e-6.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    E = np.asarray(E, dtype=float)
    dev = np.abs((W - W[0]) - (E - E[0])[:, None])
    if scaled:
        dev = dev / np.maximum(1.0, np.maximum(np.abs(W), np.abs(W[0])))
    return dev.max(axis=1)


def split_energy_potential(W, energy_rule: Optional[Callable] = None, split_tol: float = SPLIT_TOL):
    """Split W_n(x) = E_n - V(x).

    With an energy rule, E_n comes from it and V = E_0 - W_0.  Without
    one, E_0 = 0 fixes the gauge, V = -W_0 and E_n is the grid mean of
    W_n - W_0.  Returns (V, E, residual) and raises
    :class:`InconsistencyError` when the scaled level-split residual
    exceeds ``split_tol``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    levels = W.shape[0]
    if energy_rule is not None:
        E = np.array([float(energy_rule(n)) for n in range(levels)])
        V = E[0] - W[0]
    else:
        E = (W - W[0]).mean(axis=1)
        V = -W[0]
    residual = level_split_residual(W, E)
    worst = int(np.argmax(residual))
    if residual[worst] > split_tol:
        raise InconsistencyError(
            f"level {worst} does not split off a constant: residual "
            f"{residual[worst]:.3e} > {split_tol:.1e}; not a solvable triple",
            residual=residual,
        )
    return V, E, residual


def _align_sign(psi):
    nz = np.flatnonzero(psi)
    if nz.size and psi[nz[0]] < 0.0:
        return -psi
    return psi


def _normalize(psi, dx):
    norm = trapezoid_norm(psi, dx)
    if not norm > 1e-300 or not math.isfinite(norm):
        raise DegenerateSupportError("state has no support on the grid (norm below 1e-300)")
    return _align_sign(psi / norm)


def assemble_psi(inp: PctInputs, n: int) -> np.ndarray:
    """psi_n = f(x) F_n(g(x)) on the grid, trapezoid-normalized, first
    nonzero sample positive."""
    x = inp.grid.x
    psi = build_f(inp.M, inp.g, inp.fam, x) * inp.fam.F(n, inp.g.g(x))
    return _normalize(psi, inp.grid.dx)


def construct_system(
    inp: PctInputs,
    n_max: int,
    energy_rule: Optional[Callable] = None,
    split_tol: float = SPLIT_TOL,
    kind: str = "generic",
    params: Optional[dict] = None,
) -> ConstructedSystem:
    if int(n_max) != n_max or n_max < 0:
        raise DomainError(f"n_max must be a non-negative integer, got {n_max!r}")
    rule = energy_rule if energy_rule is not None else inp.fam.energy_rule
    x = inp.grid.x
    W = np.array([rhs_solvable(inp, n, x) for n in range(n_max + 1)])
    V, E, residual = split_energy_potential(W, rule, split_tol)
    psi = np.array([assemble_psi(inp, n) for n in range(n_max + 1)])
    if rule is not None:
        note = "energies from the closed-form rule; V = E_0 - W_0"
    else:
        note = "gauge E_0 = 0; V = -W_0; E_n = grid mean of W_n - W_0"
    return ConstructedSystem(
        inputs=inp, V=V, E=E, psi=psi, gauge_note=note, split_residual=residual,
        kind=kind, params=dict(params or {}),
    )


def default_exponential_grid(beta: float = 1.0) -> Grid1D:
    """[-10/beta, 25/beta] with 8000 points: the states decay like
    exp(-g/2) to the left and like g^((nu+1)/2) = exp(-beta (nu+1) x/2) to
    the right."""
    return Grid1D(-10.0 / beta, 25.0 / beta, 8000)


def default_harmonic_grid() -> Grid1D:
    return Grid1D(-8.0, 8.0, 2000)


def laguerre_exponential_inputs(beta: float, nu: float, grid: Grid1D) -> PctInputs:
    if not beta > 0.0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    beta, nu = float(beta), float(nu)
    fam = dressed_laguerre_family(nu)
    fam = replace(fam, energy_rule=lambda n: beta * beta * (n + 0.5 * (nu + 1.0)))
    u = make_exp_map(-beta).restrict(grid.x_lo, grid.x_hi)
    return PctInputs(
        M=MassProfile(u.with_label(f"exp(-{beta!r}x)")),
        g=CoordinateMap(u.with_label(f"exp(-{beta!r}x)")),
        fam=fam,
        grid=grid,
    )


def construct_laguerre_exponential(
    beta: float, nu: float, n_max: int, grid: Optional[Grid1D] = None
) -> ConstructedSystem:
    """M(x) = g(x) = exp(-beta x) with the dressed Laguerre family.

    This is the M = lambda g' branch with lambda = -1/beta.  The spectrum
    comes from the energy rule E_n = beta^2 (n + (nu+1)/2); V is whatever
    the generic split yields and is checked elsewhere against
    (beta^2/4)[(nu^2-1) e^{beta x} + e^{-beta x}].
    """
    grid = grid or default_exponential_grid(beta)
    inp = laguerre_exponential_inputs(beta, nu, grid)
    return construct_system(
        inp, n_max, kind="laguerre_exponential",
        params={"beta": float(beta), "nu": float(nu), "lambda": -1.0 / float(beta)},
    )


def harmonic_inputs(grid: Grid1D) -> PctInputs:
    fam = replace(dressed_hermite_family(), energy_rule=lambda n: 2.0 * n + 1.0)
    return PctInputs(
        M=MassProfile(constant(1.0).restrict(grid.x_lo, grid.x_hi)),
        g=CoordinateMap(affine(1.0, 0.0).restrict(grid.x_lo, grid.x_hi)),
        fam=fam,
        grid=grid,
    )


def construct_harmonic_limit(n_max: int, grid: Optional[Grid1D] = None) -> ConstructedSystem:
    """Constant mass, g = x, dressed Hermite: V = x^2, E_n = 2n + 1."""
    grid = grid or default_harmonic_grid()
    return construct_system(
        harmonic_inputs(grid), n_max, kind="harmonic", params={"lambda": 1.0}
    )


def exponential_potential(beta: float, nu: float, x):
    """Closed form (beta^2/4)[(nu^2-1) e^{beta x} + e^{-beta x}]; used only as
    a reference, never by the construction path."""
    x = np.asarray(x, dtype=float)
    return 0.25 * beta**2 * ((nu * nu - 1.0) * np.exp(beta * x) + np.exp(-beta * x))


# -- dQ generators -----------------------------------------------------------


def deltaq_zero() -> DeltaQ:
    return DeltaQ("zero", constant(0.0), energy_rule=lambda sys, n: 0.0)


def deltaq_constant(c: float) -> DeltaQ:
    return DeltaQ(f"constant({c!r})", constant(float(c)))


def _two_over_g_energy(sys: ConstructedSystem, n: int):
    if sys.kind == "laguerre_exponential":
        return sys.params["beta"] ** 2
    return None


def deltaq_two_over_g() -> DeltaQ:
    return DeltaQ("two_over_g", 2.0 * power(-1.0), energy_rule=_two_over_g_energy)


def deltaq_linear(slope: float, intercept: float = 0.0) -> DeltaQ:
    return DeltaQ(f"linear({slope!r},{intercept!r})", affine(float(slope), float(intercept)))


def custom_deltaQ(q: SmoothMap1D, label: str, energy_rule: Optional[Callable] = None) -> DeltaQ:
    """Hook for user generators such as dQ = -(b/g') sum_i G(i, x), written
    as a map in g with its analytic g-derivatives."""
    return DeltaQ(label, q, energy_rule)


def _as_deltaq(dq) -> DeltaQ:
    if isinstance(dq, DeltaQ):
        return dq
    if isinstance(dq, SmoothMap1D):
        return DeltaQ(dq.label, dq)
    raise UsageError(f"expected a DeltaQ or SmoothMap1D, got {type(dq).__name__}")


def h_from_deltaQ(dq, g: CoordinateMap, x_ref: float, x, tol: float = 1e-12):
    """h(x) = exp(1/2 int_{g(x_ref)}^{g(x)} dQ(y) dy), so h(x_ref) = 1."""
    q = _as_deltaq(dq).q
    g_ref = float(g.g(x_ref))
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([
        math.exp(0.5 * integrate(q, g_ref, float(g.g(t)), tol * (1.0 + abs(float(g.g(t)) - g_ref))))
        for t in pts
    ])
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def moderating_map(dq, g: CoordinateMap, x_ref: float) -> SmoothMap1D:
    """h as a SmoothMap1D.  With phi = h'/h = dQ(g) g'/2, the chain is
    h' = h phi, h'' = h (phi^2 + phi'), h''' = h (phi^3 + 3 phi phi' + phi'');
    the ratios are exposed directly so h may overflow without harm."""
    q = _as_deltaq(dq).q
    gm = g.g

    def phi(x):
        return 0.5 * q(gm(x)) * gm.d1(x)

    def phi1(x):
        y, y1, y2 = gm(x), gm.d1(x), gm.d2(x)
        return 0.5 * (q.d1(y) * y1**2 + q(y) * y2)

    def phi2(x):
        y, y1, y2, y3 = gm(x), gm.d1(x), gm.d2(x), gm.d3(x)
        return 0.5 * (q.d2(y) * y1**3 + 3.0 * q.d1(y) * y1 * y2 + q(y) * y3)

    h = lambda x: h_from_deltaQ(q, g, x_ref, x)
    return SmoothMap1D(
        h,
        lambda x: h(x) * phi(x),
        lambda x: h(x) * (phi(x) ** 2 + phi1(x)),
        lambda x: h(x) * (phi(x) ** 3 + 3.0 * phi(x) * phi1(x) + phi2(x)),
        lo=gm.lo,
        hi=gm.hi,
        label=f"h[{_as_deltaq(dq).label}]",
        logd1=phi,
        logd2=lambda x: phi(x) ** 2 + phi1(x),
    )


# -- perturbation branch -----------------------------------------------------


def delta_rhs_eq13(inp: PctInputs, n: int, h: SmoothMap1D, x):
    """D = dE - dV = -(1/M)[h''/h + (2h'/h)(f'/f + g' F'/F - M'/(2M))]."""
    x = np.asarray(x, dtype=float)
    gm, m = inp.g.g, inp.M.m
    mv = m(x)
    fpf = f_log_derivative(inp.M, inp.g, inp.fam, x)
    Fl = log_deriv_F(inp.fam, n, gm(x))
    r1, r2 = h.ratio1(x), h.ratio2(x)
    return -(r2 + 2.0 * r1 * (fpf + gm.d1(x) * Fl - 0.5 * m.ratio1(x))) / mv


def delta_rhs_eq10(inp: PctInputs, n: int, dq, x):
    """D = -(1/2M)(g'' + 2f'g'/f - M'g'/M) dQ
           - (g'^2/M)[(F'/F) dQ + dQ_g/2 + dQ^2/4],
    i.e. the dQ form with dR = -dQ F'/F substituted.  The first term is
    kept in full for every mass; it vanishes identically when Q = 0."""
    x = np.asarray(x, dtype=float)
    q = _as_deltaq(dq).q
    gm, m = inp.g.g, inp.M.m
    gv, g1 = gm(x), gm.d1(x)
    mv = m(x)
    qv, qg = q(gv), q.d1(gv)
    fpf = f_log_derivative(inp.M, inp.g, inp.fam, x)
    Fl = log_deriv_F(inp.fam, n, gv)
    pref = gm.d2(x) + 2.0 * fpf * g1 - m.ratio1(x) * g1
    return -0.5 * pref * qv / mv - g1**2 / mv * (Fl * qv + 0.5 * qg + 0.25 * qv * qv)


def node_free_mask(fam: SpectralFamily, n: int, g_values, node_guard: float = NODE_GUARD):
    """True where F_n is safely away from its zeros on a sampled g-path.

    Samples adjacent to a sign change of the polynomial factor, and samples
    the node guard rejects, are masked out.
    """
    p = np.asarray(fam.poly(n, g_values), dtype=float)
    mask = np.ones(p.shape, dtype=bool)
    flips = np.flatnonzero(np.sign(p[:-1]) * np.sign(p[1:]) <= 0)
    mask[flips] = False
    mask[flips + 1] = False
    for i in np.flatnonzero(mask):
        try:
            log_deriv_F(fam, n, g_values[i], node_guard)
        except NodeProximityError:
            mask[i] = False
    return mask


def _node_check(sys: ConstructedSystem, n: int, override: bool):
    if not 0 <= n <= sys.n_max:
        raise DomainError(f"level {n} not constructed (n_max = {sys.n_max})")
    fam = sys.inputs.fam
    gv = sys.inputs.g.g(sys.x)
    p = np.asarray(fam.poly(n, gv), dtype=float)
    has_node = np.any(np.sign(p[:-1]) * np.sign(p[1:]) <= 0)
    if not has_node:
        return np.ones(gv.shape, dtype=bool)
    if not override:
        i = int(np.flatnonzero(np.sign(p[:-1]) * np.sign(p[1:]) <= 0)[0])
        raise NodeProximityError(
            f"F_{n} of {fam.name} has a node on the grid near x={sys.x[i]!r}; "
            "pass override_node_guard to evaluate on node-free points only",
            n=n, g=float(gv[i]),
        )
    return node_free_mask(fam, n, gv)


def _extend_psi(sys: ConstructedSystem, n: int, log_h):
    """Normalized psi_n * h, formed in log space so h may be huge where
    psi_n underflows."""
    inp = sys.inputs
    x = sys.x
    gv = inp.g.g(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logpsi = log_f(inp.M, inp.g, inp.fam, x) + inp.fam.log_abs_F(n, gv) + log_h
    sign = np.sign(np.asarray(inp.fam.poly(n, gv), dtype=float))
    finite = np.isfinite(logpsi)
    if not finite.any():
        raise DegenerateSupportError("extended state has no support on the grid")
    top = logpsi[finite].max()
    psi = np.where(finite, sign * np.exp(np.where(finite, logpsi - top, -np.inf)), 0.0)
    ref = sys.psi[n]
    k = int(np.argmax(np.abs(ref)))
    if ref[k] * sign[k] < 0:
        psi = -psi
    return _normalize(psi, sys.grid.dx)


def apply_deltaQ(
    sys: ConstructedSystem,
    n: int,
    dq,
    override_node_guard: bool = False,
    x_ref: Optional[float] = None,
) -> PerturbationResult:
    """Perturb level ``n`` of ``sys`` with the generator ``dq``.

    D = dE - dV comes from :func:`delta_rhs_eq10`.  dE is taken from the
    generator's energy rule when it has one for this system; otherwise the
    dE = 0 gauge is used and dV = -D.  Levels whose F_n has a node on the
    grid are refused unless ``override_node_guard``, in which case D and dV
    are NaN on masked points.
    """
    dq = _as_deltaq(dq)
    valid = _node_check(sys, n, override_node_guard)
    inp = sys.inputs
    x = sys.x
    x_ref = sys.grid.midpoint if x_ref is None else float(x_ref)

    D = np.full(x.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        D[valid] = delta_rhs_eq10(inp, n, dq, x[valid])
    if not np.all(np.isfinite(D[valid])):
        raise ConstructionError(f"dE - dV is not finite on the grid for dQ={dq.label}")

    rule_value = dq.energy_rule(sys, n) if dq.energy_rule is not None else None
    if rule_value is None:
        deltaE = 0.0
        gauge = "gauge dE = 0 (no closed-form energy rule); dV = -D"
    else:
        deltaE = float(rule_value)
        gauge = "dE from the generator's closed-form rule; dV = dE - D"
    deltaV = deltaE - D

    log_h = _log_h_on_grid(dq, inp.g, x, x_ref)
    with np.errstate(over="ignore"):
        h = np.exp(log_h)
    psi_ext = _extend_psi(sys, n, log_h)
    return PerturbationResult(
        deltaQ_label=f"{dq.label} [{gauge}]", n=n, h=h, log_h=log_h, deltaV=deltaV,
        deltaE=deltaE, psi_ext=psi_ext, D=D, valid=valid, gauge_note=gauge, x_ref=x_ref,
    )


def _log_h_on_grid(dq: DeltaQ, g: CoordinateMap, x, x_ref):
    gv = g.g(x)
    running = cumulative_integral(dq.q, gv)
    j = int(np.argmin(np.abs(x - x_ref)))
    g_ref = float(g.g(x_ref))
    offset = running[j] + integrate(dq.q, float(gv[j]), g_ref, 1e-13 * (1.0 + abs(running[j])))
    return 0.5 * (running - offset)


def deltaQ_2_over_g(
    sys: ConstructedSystem, n: int = 0, override_node_guard: bool = False
) -> PerturbationResult:
    """dQ = 2/g on the exponential Laguerre system, in closed form.

    With lambda = -1/beta this gives h = g/g(x_ref) and
    dE - dV = -(2/(lambda g)) psi'/psi, i.e. dE = beta^2 and
    dV = beta^2 [(nu+1) e^{beta x} + 2 L_n'/L_n].  For n = 0 the result is
    the nu -> nu + 2 member of the same family.  The closed form is checked
    against the psi'/psi expression on every valid grid point.
    """
    if sys.kind != "laguerre_exponential":
        raise UsageError("deltaQ_2_over_g needs a system from construct_laguerre_exponential")
    valid = _node_check(sys, n, override_node_guard)
    beta, nu, lam = sys.params["beta"], sys.params["nu"], sys.params["lambda"]
    inp = sys.inputs
    x = sys.x
    gv = inp.g.g(x)
    x_ref = sys.grid.midpoint

    deltaE = beta * beta
    deltaV = np.full(x.shape, np.nan)
    xs, gs = x[valid], gv[valid]
    lag_ratio = np.asarray(inp.fam.poly_dg(n, gs), dtype=float) / np.asarray(inp.fam.poly(n, gs), dtype=float)
    deltaV[valid] = beta * beta * ((nu + 1.0) * np.exp(beta * xs) + 2.0 * lag_ratio)
    D = deltaE - deltaV

    # psi'/psi = f'/f + g' F'/F, then dE - dV = -(2/(lambda g)) psi'/psi
    psi_logd = f_log_derivative(inp.M, inp.g, inp.fam, xs) + inp.g.g.d1(xs) * log_deriv_F(inp.fam, n, gs)
    D21 = -2.0 / (lam * gs) * psi_logd
    scale_ = np.maximum(1.0, np.abs(D[valid]))
    residual = float(np.max(np.abs(D21 - D[valid]) / scale_))
    if residual > LOGDERIV_RTOL:
        raise InconsistencyError(
            f"closed-form dQ = 2/g result disagrees with psi'/psi form ({residual:.3e})",
            residual=residual,
        )

    log_h = np.log(gv) - math.log(float(inp.g.g(x_ref)))
    psi_ext = _normalize(sys.psi[n] * np.exp(log_h), sys.grid.dx)
    gauge = "dE = beta^2 in closed form; dV = dE - D"
    return PerturbationResult(
        deltaQ_label=f"two_over_g [{gauge}]", n=n, h=np.exp(log_h), log_h=log_h,
        deltaV=deltaV, deltaE=deltaE, psi_ext=psi_ext, D=D, valid=valid,
        gauge_note=gauge, x_ref=x_ref, logderiv_residual=residual,
    )
