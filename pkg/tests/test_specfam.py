import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from pdmforge.errors import DomainError, NodeProximityError
from pdmforge.field import central_difference, integrate
from pdmforge.specfam import (
    dressed_hermite_family,
    dressed_laguerre_family,
    hermite,
    laguerre,
    laguerre_dg,
    log_deriv_F,
)


def laguerre_expansion(n, nu, g):
    """L_n^nu(g) = sum_k (-1)^k C(n+nu, n-k) g^k / k!, binomial via gamma."""
    total = 0.0
    for k in range(n + 1):
        binom = math.gamma(n + nu + 1) / (math.gamma(n - k + 1) * math.gamma(nu + k + 1))
        total += (-1) ** k * binom * g**k / math.factorial(k)
    return total


def test_laguerre_base_cases():
    assert laguerre(0, 3.7, 12.0) == 1.0
    assert laguerre(1, 2.0, 0.5) == 2.5


def test_laguerre_second_degree():
    # g^2/2 - (nu+2) g + (nu+1)(nu+2)/2 at nu=2, g=1
    assert laguerre(2, 2.0, 1.0) == pytest.approx(2.5, rel=1e-15)


def test_laguerre_domain_errors():
    with pytest.raises(DomainError):
        laguerre(-1, 0.0, 1.0)
    with pytest.raises(DomainError):
        laguerre(2, -1.0, 1.0)
    with pytest.raises(DomainError):
        laguerre(2, 0.0, -0.1)
    with pytest.raises(DomainError):
        dressed_laguerre_family(-1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.floats(-0.9, 6.0), st.floats(0.0, 30.0))
def test_laguerre_recurrence_matches_expansion(n, nu, g):
    ref = laguerre_expansion(n, nu, g)
    scale = sum(
        abs(math.gamma(n + nu + 1) / (math.gamma(n - k + 1) * math.gamma(nu + k + 1)) * g**k / math.factorial(k))
        for k in range(n + 1)
    )
    # relative to the size of the terms, which bounds the expansion's own rounding
    assert abs(laguerre(n, nu, g) - ref) <= 1e-10 * max(abs(ref), 1e-5 * scale)


def test_laguerre_agrees_with_scipy():
    g = np.linspace(0, 20, 41)
    for n in range(6):
        np.testing.assert_allclose(laguerre(n, 1.5, g), special.eval_genlaguerre(n, 1.5, g), rtol=1e-12, atol=1e-12)


def test_laguerre_dg_examples():
    assert laguerre_dg(0, 2.0, 3.0) == 0.0
    assert laguerre_dg(1, 5.5, 7.0) == -1.0
    assert laguerre_dg(2, 2.0, 1.0) == -3.0
    fd = central_difference(lambda t: laguerre(2, 2.0, t), 1.0, 1, 1e-5)
    assert laguerre_dg(2, 2.0, 1.0) == pytest.approx(fd, rel=1e-8)


def test_dressed_laguerre_values():
    fam = dressed_laguerre_family(1.0)
    assert fam.R(0, 1.0) == pytest.approx(0.75)
    assert fam.Q(3.0) == 0.0
    assert fam.F(0, 2.0) == pytest.approx(0.7357589, abs=1e-7)


def test_dressed_hermite_values():
    fam = dressed_hermite_family()
    assert fam.F(0, 0.0) == 1.0
    assert fam.R(1, 0.0) == 3.0
    assert fam.F(2, 1.0) == pytest.approx(1.2130613, abs=1e-7)


def test_hermite_agrees_with_scipy():
    g = np.linspace(-4, 4, 33)
    for n in range(6):
        np.testing.assert_allclose(hermite(n, g), special.eval_hermite(n, g), rtol=1e-12, atol=1e-10)


def test_log_deriv_examples():
    lag = dressed_laguerre_family(1.0)
    assert log_deriv_F(lag, 0, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert log_deriv_F(dressed_hermite_family(), 0, 0.0) == 0.0
    with pytest.raises(NodeProximityError) as info:
        log_deriv_F(dressed_laguerre_family(2.0), 1, 3.0)
    assert info.value.n == 1 and info.value.g == 3.0


def test_log_deriv_survives_underflow():
    # F itself underflows at g = 2000, the ratio does not
    fam = dressed_laguerre_family(2.0)
    assert fam.F(0, 2000.0) == 0.0
    assert log_deriv_F(fam, 0, 2000.0) == pytest.approx(-0.5 + 1.5 / 2000.0)


FAMILIES = [
    (dressed_laguerre_family(0.5), (0.2, 25.0)),
    (dressed_laguerre_family(2.0), (0.2, 25.0)),
    (dressed_laguerre_family(3.5), (0.2, 25.0)),
    (dressed_hermite_family(), (-5.0, 5.0)),
]


@pytest.mark.parametrize("fam, span", FAMILIES, ids=lambda v: getattr(v, "name", ""))
def test_family_ode_residual(fam, span):
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 200:
        n = int(rng.integers(0, 5))
        g = float(rng.uniform(*span))
        if abs(fam.poly(n, g)) < 1e-3 * max(1.0, abs(g)) ** n:
            continue
        h = 1e-5 * (1 + abs(g))
        F = fam.F(n, g)
        d1 = fam.dF(n, g)
        d2 = central_difference(lambda t: fam.dF(n, t), g, 1, h)
        res = d2 + fam.Q(g) * d1 + fam.R(n, g) * F
        assert abs(res) / max(1.0, abs(F)) <= 1e-5
        assert d1 == pytest.approx(central_difference(lambda t: fam.F(n, t), g, 1, h), rel=1e-6, abs=1e-12)
        checked += 1


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0, 2.5, 4.0])
def test_laguerre_orthogonality_by_quadrature(nu):
    # g = t^2 removes the sqrt(g)-type endpoint singularity for fractional nu
    def inner(m, n):
        return integrate(
            lambda t: 2 * t * math.exp(-t * t) * t ** (2 * nu) * laguerre(m, nu, t * t) * laguerre(n, nu, t * t),
            0.0,
            math.sqrt(60.0),
            1e-12,
        )

    diag = [inner(n, n) for n in range(4)]
    for m in range(4):
        for n in range(m + 1, 4):
            assert abs(inner(m, n)) / math.sqrt(diag[m] * diag[n]) <= 1e-8
