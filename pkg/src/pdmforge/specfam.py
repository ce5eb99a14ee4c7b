"""Dressed orthogonal-polynomial families F_n(g) = w(g) P_n(g).

Each family satisfies F'' + Q F' + R_n F = 0 in the variable g.  Only the
weight-absorbed convention with Q = 0 is provided.  The Laguerre order is
called ``nu`` throughout (alpha/beta/gamma are reserved for the von Roos
ordering parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NodeProximityError

NODE_GUARD = 1e-12


def _check_index(n):
    if int(n) != n or n < 0:
        raise DomainError(f"polynomial index must be a non-negative integer, got {n!r}")
    return int(n)


def _check_laguerre(n, nu, g):
    n = _check_index(n)
    if not nu > -1.0:
        raise DomainError(f"Laguerre order nu must exceed -1, got {nu!r}")
    g = np.asarray(g, dtype=float)
    if np.any(g < 0.0) or np.any(np.isnan(g)):
        raise DomainError("Laguerre argument g must be >= 0")
    return n, float(nu), g


def laguerre(n: int, nu: float, g):
    """Generalized Laguerre L_n^nu(g) by the three-term recurrence."""
    n, nu, g = _check_laguerre(n, nu, g)
    prev = np.ones_like(g)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 + nu - g
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 + nu - g) * cur - (k + nu) * prev) / (k + 1)
    return cur if np.ndim(cur) else float(cur)


def laguerre_dg(n: int, nu: float, g):
    """d/dg L_n^nu(g) = -L_{n-1}^{nu+1}(g); identically 0 for n = 0."""
    n, nu, g = _check_laguerre(n, nu, g)
    if n == 0:
        out = np.zeros_like(g)
        return out if out.ndim else 0.0
    return -laguerre(n - 1, nu + 1.0, g)


def hermite(n: int, g):
    """Physicists' Hermite H_n(g) by H_{k+1} = 2g H_k - 2k H_{k-1}."""
    n = _check_index(n)
    g = np.asarray(g, dtype=float)
    prev = np.ones_like(g)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = 2.0 * g
    for k in range(1, n):
        prev, cur = cur, 2.0 * g * cur - 2.0 * k * prev
    return cur if np.ndim(cur) else float(cur)


def hermite_dg(n: int, g):
    n = _check_index(n)
    if n == 0:
        out = np.zeros_like(np.asarray(g, dtype=float))
        return out if out.ndim else 0.0
    return 2.0 * n * hermite(n - 1, g)


@dataclass(frozen=True)
class SpectralFamily:
    """Indexed family F_n(g) = exp(log_weight(g)) * poly(n, g).

    ``Q``/``dQ`` are the first-derivative coefficient of the family's ODE
    and its g-derivative; ``q_zero`` marks the Q = 0 convention so callers
    can drop those terms exactly.  ``energy_rule(n)`` is attached by the
    system constructors, which know the scale factors.
    """

    name: str
    params: dict
    g_lo: float
    g_hi: float
    poly: Callable
    poly_dg: Callable
    log_weight: Callable
    log_weight_dg: Callable
    Q: Callable
    dQ: Callable
    R: Callable
    q_zero: bool = True
    energy_rule: Optional[Callable] = field(default=None, compare=False)

    def contains(self, g) -> bool:
        g = np.asarray(g, dtype=float)
        return bool(np.all((g > self.g_lo) & (g < self.g_hi)))

    def F(self, n, g):
        return np.exp(self.log_weight(g)) * self.poly(n, g)

    def dF(self, n, g):
        w = np.exp(self.log_weight(g))
        return w * (self.log_weight_dg(g) * self.poly(n, g) + self.poly_dg(n, g))

    def log_abs_F(self, n, g):
        with np.errstate(divide="ignore"):
            return self.log_weight(g) + np.log(np.abs(self.poly(n, g)))


def dressed_laguerre_family(nu: float) -> SpectralFamily:
    """F_n = exp(-g/2) g^((nu+1)/2) L_n^nu(g) on g > 0, with Q = 0 and
    R_n = (2n+nu+1)/(2g) + (1-nu^2)/(4g^2) - 1/4."""
    if not nu > -1.0:
        raise DomainError(f"Laguerre order nu must exceed -1, got {nu!r}")
    nu = float(nu)
    s = 0.5 * (nu + 1.0)

    def log_weight(g):
        g = np.asarray(g, dtype=float)
        return -0.5 * g + s * np.log(g)

    def log_weight_dg(g):
        return -0.5 + s / np.asarray(g, dtype=float)

    def R(n, g):
        g = np.asarray(g, dtype=float)
        return (2 * n + nu + 1.0) / (2.0 * g) + (1.0 - nu * nu) / (4.0 * g * g) - 0.25

    zero = lambda g: np.zeros_like(np.asarray(g, dtype=float))
    return SpectralFamily(
        name="dressed_laguerre",
        params={"nu": nu},
        g_lo=0.0,
        g_hi=math.inf,
        poly=lambda n, g: laguerre(n, nu, g),
        poly_dg=lambda n, g: laguerre_dg(n, nu, g),
        log_weight=log_weight,
        log_weight_dg=log_weight_dg,
        Q=zero,
        dQ=zero,
        R=R,
    )


def dressed_hermite_family() -> SpectralFamily:
    """F_n = exp(-g^2/2) H_n(g) on the real line, Q = 0, R_n = 2n+1-g^2."""
    zero = lambda g: np.zeros_like(np.asarray(g, dtype=float))
    return SpectralFamily(
        name="dressed_hermite",
        params={},
        g_lo=-math.inf,
        g_hi=math.inf,
        poly=hermite,
        poly_dg=hermite_dg,
        log_weight=lambda g: -0.5 * np.asarray(g, dtype=float) ** 2,
        log_weight_dg=lambda g: -np.asarray(g, dtype=float),
        Q=zero,
        dQ=zero,
        R=lambda n, g: 2 * n + 1.0 - np.asarray(g, dtype=float) ** 2,
    )


def log_deriv_F(fam: SpectralFamily, n: int, g, node_guard: float = NODE_GUARD):
    """F'/F = w'/w + P'/P, refusing points where P is (relatively) zero.

    The local scale for the guard is max |P| over g and g +- 1% of
    max(1, |g|).  The weight is handled in log form so the ratio stays
    finite where F itself underflows.
    """
    g_arr = np.asarray(g, dtype=float)
    if not fam.contains(g_arr):
        raise DomainError(f"g outside the domain ({fam.g_lo}, {fam.g_hi}) of {fam.name}")
    p = np.asarray(fam.poly(n, g_arr), dtype=float)
    delta = 1e-2 * np.maximum(1.0, np.abs(g_arr))
    lo_side = g_arr - delta
    if math.isfinite(fam.g_lo):
        lo_side = np.maximum(lo_side, 0.5 * (g_arr + fam.g_lo))
    scale_ = np.maximum.reduce([
        np.abs(p),
        np.abs(np.asarray(fam.poly(n, lo_side), dtype=float)),
        np.abs(np.asarray(fam.poly(n, g_arr + delta), dtype=float)),
    ])
    bad = np.abs(p) <= node_guard * scale_
    if np.any(bad):
        g_bad = float(np.atleast_1d(g_arr)[np.argmax(np.atleast_1d(bad))])
        raise NodeProximityError(
            f"F_{n} of {fam.name} has a node near g={g_bad!r}", n=n, g=g_bad
        )
    out = fam.log_weight_dg(g_arr) + np.asarray(fam.poly_dg(n, g_arr), dtype=float) / p
    return out if np.ndim(out) else float(out)
