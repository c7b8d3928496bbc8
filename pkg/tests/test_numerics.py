"""Numeric kernel tests.

Expected values marked below were frozen from a 60-digit mpmath oracle:
phi(c) = exp(-c^2/2)/sqrt(2 pi), Phi(c) = erfc(-c/sqrt(2))/2,
lam = phi/Phi, d = 1 - lam*(c + lam).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatsel.numerics import (
    MillsValue,
    inverse_mills,
    inverse_mills_derivative,
    mills_lambda_dee,
    normal_cdf,
    normal_pdf,
)

# -- spot values -------------------------------------------------------------


def test_pdf_at_zero_closed_form():
    assert normal_pdf(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=0, abs=0)
    assert normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-16)


def test_pdf_at_one_oracle():
    # mpmath: 0.2419707245191433498
    assert normal_pdf(1.0) == pytest.approx(0.24197072451914337, rel=1e-15)


def test_pdf_symmetry_exact():
    for c in (1.0, 2.5, 17.3, 0.001):
        assert normal_pdf(c) == normal_pdf(-c)


def test_cdf_at_zero():
    assert normal_cdf(0.0) == 0.5


def test_cdf_975_quantile_oracle():
    # mpmath: Phi(1.959963985) = 0.9750000000268816
    assert normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-9)


def test_cdf_deep_tail_oracle():
    # mpmath erfc oracle: 7.61985302416e-24
    assert normal_cdf(-10.0) == pytest.approx(7.619853024160593e-24, abs=1e-27)


def test_cdf_no_underflow_to_minus_37():
    for c in (-30.0, -35.0, -37.0):
        assert normal_cdf(c) > 0.0


def test_cdf_reflection():
    for c in np.linspace(-8, 8, 41):
        assert normal_cdf(c) + normal_cdf(-c) == pytest.approx(1.0, abs=5e-16)


def test_cdf_relative_error_vs_oracle():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    rng = np.random.default_rng(5)
    for c in rng.uniform(-8, 8, size=400):
        exact = float(mp.erfc(-mp.mpf(c) / mp.sqrt(2)) / 2)
        assert normal_cdf(c) == pytest.approx(exact, rel=1e-14)


def test_mills_at_zero():
    mv = inverse_mills(0.0)
    assert mv.lam == pytest.approx(0.7978845608, abs=1e-10)
    assert mv.lam == pytest.approx(2 * normal_pdf(0.0), rel=1e-15)
    assert mv.dee == pytest.approx(0.3633802277, abs=1e-10)
    assert mv.dee == pytest.approx(1 - mv.lam**2, rel=1e-14)


def test_mills_at_minus_one_oracle():
    # mpmath: 1.5251352761609812
    assert inverse_mills(-1.0).lam == pytest.approx(1.5251352761, abs=1e-9)


def test_mills_at_minus_forty_asymptotic():
    # 3-term asymptotic oracle -c - 1/c + 2/c^3 = 40.02496875, cross-checked
    # against the extended-precision ratio 40.024968847207264
    mv = inverse_mills(-40.0)
    assert mv.lam == pytest.approx(40.02497, abs=1e-4)
    assert mv.lam == pytest.approx(40.024968847207264, rel=1e-12)


def test_derivative_at_zero():
    # -lam(0)^2 = -2/pi
    assert inverse_mills_derivative(0.0) == pytest.approx(-0.6366197724, abs=1e-9)
    assert inverse_mills_derivative(0.0) == pytest.approx(-2 / math.pi, rel=1e-14)


def test_derivative_deep_tail():
    d = inverse_mills_derivative(-40.0)
    assert -1.0 < d < -0.999


def test_domain_errors():
    for bad in (math.nan, math.inf, -math.inf):
        for fn in (normal_pdf, normal_cdf, inverse_mills, inverse_mills_derivative):
            with pytest.raises(ValueError):
                fn(bad)


def test_mills_value_type():
    mv = inverse_mills(1.3)
    assert isinstance(mv, MillsValue)
    assert mv.lam > 0 and 0 < mv.dee < 1


# -- invariants over the working range ---------------------------------------


def test_invariants_bulk():
    rng = np.random.default_rng(123)
    c = rng.uniform(-50, 50, size=100_000)
    lam, dee = mills_lambda_dee(c)
    assert (lam > 0).all()
    assert (lam + c > 0).all()
    assert ((dee > 0) & (dee < 1)).all()
    deriv = dee - 1.0
    assert ((deriv > -1) & (deriv < 0)).all()
    # algebraic identity: derivative equals dee - 1 exactly
    scalar = np.array([inverse_mills_derivative(v) for v in c[:200]])
    assert np.array_equal(scalar, (dee - 1.0)[:200])


def test_extreme_range_no_overflow():
    c = np.array([-1e6, -1e4, -100.0, 100.0, 1e4, 1e6])
    lam, dee = mills_lambda_dee(c)
    assert np.isfinite(lam).all() and np.isfinite(dee).all()
    assert (lam > 0).all() and (lam + c > 0).all()
    assert ((dee > 0) & (dee < 1)).all()


def test_monotonicity():
    # strictly decreasing; above c ~ 38.6 the true value drops below the
    # smallest positive double, so strictness is only representable below it
    rng = np.random.default_rng(99)
    c = np.sort(rng.uniform(-50, 38, size=4000))
    lam, _ = mills_lambda_dee(c)
    assert (np.diff(lam) < 0).all()


def test_finite_difference_agreement():
    rng = np.random.default_rng(17)
    c = rng.uniform(-30, 30, size=3000)
    h = 1e-6
    lam_hi, _ = mills_lambda_dee(c + h)
    lam_lo, _ = mills_lambda_dee(c - h)
    fd = (lam_hi - lam_lo) / (2 * h)
    _, dee = mills_lambda_dee(c)
    assert np.max(np.abs((dee - 1.0) - fd)) <= 1e-5


def test_asymptotic_switch_accuracy():
    # both branches stay within 1e-9 relative of the exact value at the cutoff
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    for c in (-30.0000001, -29.9999999, -31.0, -35.0, -60.0, -300.0):
        exact = mp.npdf(c) / (mp.erfc(-mp.mpf(c) / mp.sqrt(2)) / 2)
        lam, _ = mills_lambda_dee(np.array([c]))
        assert lam[0] == pytest.approx(float(exact), rel=1e-9)


@given(st.floats(min_value=-50, max_value=50, allow_nan=False))
@settings(max_examples=300)
def test_mills_properties_hypothesis(c):
    mv = inverse_mills(c)
    assert mv.lam > 0
    assert mv.lam + c > 0
    assert 0 < mv.dee < 1
    d = inverse_mills_derivative(c)
    assert -1 < d < 0
    assert d == mv.dee - 1.0
