"""Smooth one-dimensional maps with analytic derivative chains.

Every map carries its value and first three derivatives as closed-form
callables, so nothing downstream differentiates numerically.  Maps are
built from a handful of constructors (constant, affine, exponential,
power, polynomial) and combined with sum, product, reciprocal and
composition, which propagate the derivative chain exactly.

Finite differences (:func:`fd_consistency`) exist only to test these
chains.  :func:`integrate` is an adaptive Simpson rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConstructionError, DomainError, QuadratureError

EPS = np.finfo(float).eps


def _full(x, value):
    return np.full(np.shape(x), float(value))


@dataclass(frozen=True)
class SmoothMap1D:
    """A real function of one variable with derivatives up to third order.

    ``logd1`` and ``logd2`` optionally give u'/u and u''/u in closed form.
    They matter for maps that over/underflow (exponentials of large
    arguments) where the ratio is tame but the factors are not.
    """

    f: Callable
    df: Callable
    d2f: Callable
    d3f: Callable
    lo: float = -math.inf
    hi: float = math.inf
    label: str = "u"
    logd1: Optional[Callable] = None
    logd2: Optional[Callable] = None

    def __call__(self, x):
        return self.f(x)

    def eval(self, x):
        return self.f(x)

    def d1(self, x):
        return self.df(x)

    def d2(self, x):
        return self.d2f(x)

    def d3(self, x):
        return self.d3f(x)

    def deriv(self, x, order):
        if order == 0:
            return self.f(x)
        return (self.df, self.d2f, self.d3f)[order - 1](x)

    def ratio1(self, x):
        """u'(x)/u(x)."""
        if self.logd1 is not None:
            return self.logd1(x)
        return self.df(x) / self.f(x)

    def ratio2(self, x):
        """u''(x)/u(x)."""
        if self.logd2 is not None:
            return self.logd2(x)
        return self.d2f(x) / self.f(x)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lo) & (x <= self.hi)))

    def restrict(self, lo: float, hi: float) -> "SmoothMap1D":
        """Same map on the intersection of its domain with [lo, hi]."""
        new_lo, new_hi = max(self.lo, lo), min(self.hi, hi)
        if not new_lo < new_hi:
            raise DomainError(
                f"empty domain intersection for {self.label}: "
                f"[{self.lo}, {self.hi}] with [{lo}, {hi}]"
            )
        return replace(self, lo=new_lo, hi=new_hi)

    def with_label(self, label: str) -> "SmoothMap1D":
        return replace(self, label=label)

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, SmoothMap1D):
            return product(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _lift(u):
    return u if isinstance(u, SmoothMap1D) else constant(float(u))


def constant(c: float) -> SmoothMap1D:
    zero = lambda x: _full(x, 0.0)
    return SmoothMap1D(
        lambda x: _full(x, c), zero, zero, zero, label=f"{c!r}",
        logd1=zero, logd2=zero,
    )


def affine(a: float, b: float = 0.0) -> SmoothMap1D:
    """x -> a*x + b."""
    zero = lambda x: _full(x, 0.0)
    return SmoothMap1D(
        lambda x: a * np.asarray(x, dtype=float) + b,
        lambda x: _full(x, a),
        zero,
        zero,
        label=f"{a!r}*x+{b!r}",
    )


def make_exp_map(a: float, b: float = 0.0) -> SmoothMap1D:
    """x -> exp(a*x + b), with u^(k) = a^k u and exact log-derivatives."""
    a = float(a)
    a2 = a * a
    a3 = a2 * a

    def u(x):
        return np.exp(a * np.asarray(x, dtype=float) + b)

    return SmoothMap1D(
        u,
        lambda x: a * u(x),
        lambda x: a2 * u(x),
        lambda x: a3 * u(x),
        label=f"exp({a!r}*x+{b!r})",
        logd1=lambda x: _full(x, a),
        logd2=lambda x: _full(x, a2),
    )


def power(p: float) -> SmoothMap1D:
    """x -> x**p.  Non-integer exponents restrict the domain to x >= 0."""
    p = float(p)
    integral = p.is_integer()
    lo = -math.inf if integral else 0.0

    def term(k, coeff):
        e = p - k
        if coeff == 0.0:
            return lambda x: _full(x, 0.0)
        return lambda x: coeff * np.power(np.asarray(x, dtype=float), e)

    c1 = p
    c2 = p * (p - 1.0)
    c3 = p * (p - 1.0) * (p - 2.0)
    return SmoothMap1D(
        term(0, 1.0), term(1, c1), term(2, c2), term(3, c3),
        lo=lo, label=f"x**{p!r}",
    )


def polynomial(coeffs) -> SmoothMap1D:
    """Polynomial with coefficients in increasing degree order."""
    poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    chain = [poly, poly.deriv(1), poly.deriv(2), poly.deriv(3)]
    fs = [(lambda q: lambda x: q(np.asarray(x, dtype=float)) + _full(x, 0.0))(q) for q in chain]
    return SmoothMap1D(*fs, label=f"poly{tuple(coeffs)}")


def add(u: SmoothMap1D, v: SmoothMap1D) -> SmoothMap1D:
    return SmoothMap1D(
        lambda x: u.f(x) + v.f(x),
        lambda x: u.df(x) + v.df(x),
        lambda x: u.d2f(x) + v.d2f(x),
        lambda x: u.d3f(x) + v.d3f(x),
        lo=max(u.lo, v.lo),
        hi=min(u.hi, v.hi),
        label=f"({u.label}+{v.label})",
    )


def scale(u: SmoothMap1D, c: float) -> SmoothMap1D:
    return SmoothMap1D(
        lambda x: c * u.f(x),
        lambda x: c * u.df(x),
        lambda x: c * u.d2f(x),
        lambda x: c * u.d3f(x),
        lo=u.lo,
        hi=u.hi,
        label=f"{c!r}*{u.label}",
        logd1=u.logd1,
        logd2=u.logd2,
    )


def product(u: SmoothMap1D, v: SmoothMap1D) -> SmoothMap1D:
    """Leibniz rule to third order."""

    def d1(x):
        return u.df(x) * v.f(x) + u.f(x) * v.df(x)

    def d2(x):
        return u.d2f(x) * v.f(x) + 2.0 * u.df(x) * v.df(x) + u.f(x) * v.d2f(x)

    def d3(x):
        return (
            u.d3f(x) * v.f(x)
            + 3.0 * u.d2f(x) * v.df(x)
            + 3.0 * u.df(x) * v.d2f(x)
            + u.f(x) * v.d3f(x)
        )

    return SmoothMap1D(
        lambda x: u.f(x) * v.f(x), d1, d2, d3,
        lo=max(u.lo, v.lo), hi=min(u.hi, v.hi),
        label=f"({u.label}*{v.label})",
    )


def reciprocal(u: SmoothMap1D) -> SmoothMap1D:
    """1/u; the caller guarantees u has no zero on the domain of use."""

    def d1(x):
        w = u.f(x)
        return -u.df(x) / w**2

    def d2(x):
        w, w1, w2 = u.f(x), u.df(x), u.d2f(x)
        return 2.0 * w1**2 / w**3 - w2 / w**2

    def d3(x):
        w, w1, w2, w3 = u.f(x), u.df(x), u.d2f(x), u.d3f(x)
        return -w3 / w**2 + 6.0 * w1 * w2 / w**3 - 6.0 * w1**3 / w**4

    return SmoothMap1D(
        lambda x: 1.0 / u.f(x), d1, d2, d3, lo=u.lo, hi=u.hi,
        label=f"1/{u.label}",
    )


def compose(outer: SmoothMap1D, inner: SmoothMap1D) -> SmoothMap1D:
    """outer(inner(x)) via Faa di Bruno to third order."""

    def d1(x):
        return outer.df(inner.f(x)) * inner.df(x)

    def d2(x):
        y, y1 = inner.f(x), inner.df(x)
        return outer.d2f(y) * y1**2 + outer.df(y) * inner.d2f(x)

    def d3(x):
        y, y1, y2 = inner.f(x), inner.df(x), inner.d2f(x)
        return (
            outer.d3f(y) * y1**3
            + 3.0 * outer.d2f(y) * y1 * y2
            + outer.df(y) * inner.d3f(x)
        )

    return SmoothMap1D(
        lambda x: outer.f(inner.f(x)), d1, d2, d3,
        lo=inner.lo, hi=inner.hi,
        label=f"{outer.label}({inner.label})",
    )


# -- domain types -----------------------------------------------------------

_SCAN_POINTS = 1024


def _scan(u: SmoothMap1D):
    if not (math.isfinite(u.lo) and math.isfinite(u.hi)):
        raise DomainError(f"{u.label} needs a finite domain; call restrict() first")
    return np.linspace(u.lo, u.hi, _SCAN_POINTS)


@dataclass(frozen=True)
class MassProfile:
    """Dimensionless mass M(x) = m(x)/m0, in units with hbar = 2*m0 = 1."""

    m: SmoothMap1D

    def __post_init__(self):
        xs = _scan(self.m)
        vals = self.m.f(xs)
        if not np.all(np.isfinite(vals)) or np.min(vals) <= 0.0:
            raise ConstructionError(
                f"mass {self.m.label} is not strictly positive on "
                f"[{self.m.lo}, {self.m.hi}] (min {np.min(vals)!r})"
            )


@dataclass(frozen=True)
class CoordinateMap:
    """The point-transformation variable g(x); g' must keep one sign."""

    g: SmoothMap1D

    def __post_init__(self):
        xs = _scan(self.g)
        slope = self.g.df(xs)
        if not np.all(np.isfinite(slope)) or not (
            np.all(slope > 0.0) or np.all(slope < 0.0)
        ):
            raise ConstructionError(
                f"coordinate map {self.g.label} is not strictly monotone on "
                f"[{self.g.lo}, {self.g.hi}]"
            )


# -- quadrature -------------------------------------------------------------

MAX_DEPTH = 50


def _simpson(fa, fm, fb, a, b):
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def integrate(u, a: float, b: float, tol: float = 1e-10) -> float:
    """Adaptive Simpson quadrature of ``u`` over [a, b].

    Intervals are bisected until the two-panel and one-panel estimates
    agree to 15*tol_local, with the error budget halved at each split,
    and the Richardson-corrected value is accumulated.  Raises
    :class:`QuadratureError` (carrying the best estimate) when a panel
    needs more than ``MAX_DEPTH`` bisections.
    """
    if not tol > 0.0:
        raise DomainError(f"tol must be positive, got {tol!r}")
    a, b = float(a), float(b)
    if a == b:
        return 0.0
    if b < a:
        return -integrate(u, b, a, tol)
    if isinstance(u, SmoothMap1D) and not (u.contains(a) and u.contains(b)):
        raise DomainError(f"[{a}, {b}] is outside the domain of {u.label}")

    f = lambda t: float(u(t))
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    stack = [(a, b, fa, fm, fb, _simpson(fa, fm, fb, a, b), tol, 0)]
    total = 0.0
    failed = False
    while stack:
        lo, hi, flo, fmid, fhi, whole, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = _simpson(flo, flm, fmid, lo, mid)
        right = _simpson(fmid, frm, fhi, mid, hi)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        elif depth >= MAX_DEPTH or not (lo < lm < mid < rm < hi):
            failed = True
            total += left + right + delta / 15.0
        else:
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    if failed or not math.isfinite(total):
        raise QuadratureError(
            f"adaptive Simpson did not reach tol={tol!r} on [{a}, {b}]",
            estimate=total,
        )
    return total


def cumulative_integral(u, nodes, tol: float = 1e-12) -> np.ndarray:
    """Running integral of ``u`` from nodes[0] to each node.

    Each panel [nodes[i], nodes[i+1]] is integrated adaptively with an
    absolute budget of ``tol * (1 + |panel estimate|)``; panels that already
    pass the Simpson agreement test are accepted without recursion.
    """
    t = np.asarray(nodes, dtype=float)
    a, b = t[:-1], t[1:]
    m = 0.5 * (a + b)
    fa, fm, fb = (np.asarray(u(s), dtype=float) for s in (a, m, b))
    flm = np.asarray(u(0.5 * (a + m)), dtype=float)
    frm = np.asarray(u(0.5 * (m + b)), dtype=float)
    whole = _simpson(fa, fm, fb, a, b)
    halves = _simpson(fa, flm, fm, a, m) + _simpson(fm, frm, fb, m, b)
    delta = halves - whole
    budget = tol * (1.0 + np.abs(halves))
    panels = halves + delta / 15.0
    for i in np.flatnonzero(~(np.abs(delta) <= 15.0 * budget)):
        panels[i] = integrate(u, a[i], b[i], float(budget[i]))
    return np.concatenate(([0.0], np.cumsum(panels)))


# -- finite-difference oracle -------------------------------------------------

# step = STEP_POWER[order] root of eps, times (1 + |x|); balances truncation
# O(h^2) against cancellation O(eps/h^order) for central stencils.
_STEP_POWER = {1: 1.0 / 3.0, 2: 1.0 / 4.0, 3: 1.0 / 5.0}


def fd_step(x: float, order: int) -> float:
    return EPS ** _STEP_POWER[order] * (1.0 + abs(x))


def central_difference(fn: Callable, x: float, order: int, h: float) -> float:
    """Second-order accurate central difference of ``fn`` at ``x``."""
    if order == 1:
        return (fn(x + h) - fn(x - h)) / (2.0 * h)
    if order == 2:
        return (fn(x + h) - 2.0 * fn(x) + fn(x - h)) / h**2
    if order == 3:
        return (fn(x + 2 * h) - 2.0 * fn(x + h) + 2.0 * fn(x - h) - fn(x - 2 * h)) / (
            2.0 * h**3
        )
    raise DomainError(f"finite-difference order must be 1..3, got {order}")


def fd_consistency(u: SmoothMap1D, x: float, order: int) -> float:
    """Relative gap |analytic - central difference| / (1 + |analytic|).

    Steps are ``eps**(1/3)``, ``eps**(1/4)`` and ``eps**(1/5)`` times
    ``(1 + |x|)`` for orders 1, 2 and 3.
    """
    if order not in _STEP_POWER:
        raise DomainError(f"order must be 1, 2 or 3, got {order}")
    h = fd_step(x, order)
    reach = 2 * h if order == 3 else h
    if not (u.lo < x - reach and x + reach < u.hi):
        raise DomainError(f"x={x!r} is not interior to the domain of {u.label}")
    fn = lambda t: float(u.f(t))
    analytic = float(u.deriv(x, order))
    numeric = central_difference(fn, x, order, h)
    return abs(analytic - numeric) / (1.0 + abs(analytic))
