import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from parabound.fields import Field
from parabound.grid import Domain, build_grid
from parabound.phi import (PhiDomainError, PhiFamily, lemma41_residual, ode_pair, phi,
                           phi_derivatives, phi_inv, ratio_gap)

EPS = np.finfo(float).eps


def test_phi_examples():
    assert phi(PhiFamily(1), 0.0) == 1.0
    assert phi(PhiFamily(2), 0.25) == pytest.approx(4 / 3, rel=1e-15)
    assert phi(PhiFamily(0.5), -3.0) == 0.0


def test_interval_endpoints():
    assert PhiFamily(2).hi == 1.0 and PhiFamily(2).lo == -math.inf
    assert PhiFamily(-1).lo == -0.5 and PhiFamily(-1).hi == math.inf
    assert PhiFamily(0.5).lo == -2.0
    assert PhiFamily(1).lo == -math.inf and PhiFamily(1).hi == math.inf


def test_phi_rejects_outside_closure():
    with pytest.raises(PhiDomainError):
        phi(PhiFamily(2), 1.5)
    with pytest.raises(PhiDomainError):
        phi(PhiFamily(-1), -0.7)


def test_near_endpoint_clamped_and_counted():
    fam = PhiFamily(-1)
    assert phi(fam, -0.5 - 1e-16) == 0.0
    assert fam.clamped == 1
    with pytest.raises(ValueError):
        PhiFamily(0)


def test_phi_inv_examples():
    for q in (-2, -1, 0.5, 1, 2, 3.5):
        assert phi_inv(PhiFamily(q), 1.0) == 0.0
    assert phi_inv(PhiFamily(-1), 0.0) == -0.5
    assert phi_inv(PhiFamily(0.5), 0.0) == -2.0
    assert phi_inv(PhiFamily(2), 4 / 3) == pytest.approx(0.25, rel=1e-15)


@pytest.mark.parametrize("q, w", [(1, 0.0), (2, 0.0), (2, -1.0), (-1, -0.1)])
def test_phi_inv_errors(q, w):
    with pytest.raises(PhiDomainError):
        phi_inv(PhiFamily(q), w)


def test_derivative_examples():
    d = phi_derivatives(PhiFamily(1), 0.7)
    assert d == pytest.approx((math.exp(0.7), math.exp(0.7)), rel=1e-15)
    assert phi_derivatives(PhiFamily(2), 0.0) == (1.0, 2.0)
    assert phi_derivatives(PhiFamily(-1), 0.0) == (1.0, -1.0)
    with pytest.raises(PhiDomainError):
        phi_derivatives(PhiFamily(2), 1.0)


# -- properties over sampled q and s -----------------------------------------

qs = st.one_of(st.floats(-4, -0.05), st.floats(0.05, 0.95), st.just(1.0), st.floats(1.05, 5))


@st.composite
def q_and_s(draw):
    q = draw(qs)
    fam = PhiFamily(q)
    lo = max(fam.lo, -20.0)
    hi = min(fam.hi, 20.0)
    u = draw(st.floats(0.001, 0.999))
    s = lo + u * (hi - lo)
    # stay where phi is representable and away from the endpoints
    assume(abs(fam.log_phi(s)) < 300 and fam.contains(s))
    return fam, s


def _pow_cond(w):
    # the exponents 1/(1-q), q/(1-q) are themselves rounded, and x^e turns a
    # relative exponent error into a relative value error of |log x^e|
    return max(1.0, abs(math.log(w)))


@given(q_and_s())
@settings(max_examples=400)
def test_ode_residual(args):
    fam, s = args
    a, b = ode_pair(fam, s)
    assert abs(a - b) <= 8 * EPS * abs(a) * _pow_cond(a)


@given(q_and_s())
@settings(max_examples=300)
def test_convexity_sign(args):
    fam, s = args
    d1, d2 = phi_derivatives(fam, s)
    assert d1 > 0
    assert (d2 > 0) if fam.q > 0 else (d2 < 0)


@given(q_and_s())
@settings(max_examples=400)
def test_ratio_gap_sign(args):
    fam, s = args
    g = ratio_gap(fam, s)
    if fam.q > 0:
        assert g >= 0
    else:
        assert g <= 0


def test_ratio_gap_matches_direct_form():
    for q in (-1.0, 0.5, 2.0):
        fam = PhiFamily(q)
        v = 0.3 if q != 2.0 else 0.4
        direct = v - (phi(fam, v) - 1.0) / phi_derivatives(fam, v)[0]
        assert ratio_gap(fam, v) == pytest.approx(direct, rel=1e-12)
        assert ratio_gap(fam, 1e-5) == pytest.approx(q * 1e-10 / 2, rel=1e-4)


@given(q_and_s())
@settings(max_examples=400)
def test_inverse_round_trip(args):
    fam, s = args
    w = phi(fam, s)
    d1 = phi_derivatives(fam, s)[0]
    back = phi_inv(fam, w)
    # an ulp of w moves s by w/phi'(s)
    cond = max(1.0, w / d1, abs(s)) * _pow_cond(w)
    assert abs(back - s) <= 4 * EPS * cond
    # and the other way round: an ulp of s moves w by phi'(s) |s|
    again = phi(fam, back)
    assert abs(again - w) <= 4 * EPS * w * max(1.0, d1 * abs(back) / w) * _pow_cond(w)


# -- discrete product rule ---------------------------------------------------

def _fields(n, q, steps=None):
    steps = steps or 2 * (n - 1)
    g = build_grid(Domain.interval(0, 1), n, 0.5, steps)
    x = g.axes[0][None, :]
    t = g.times[:, None]
    h = 2.0 + np.sin(np.pi * x) * np.exp(-t)
    v = -0.3 * np.cos(2 * x + t)
    return g, Field(g, h), Field(g, v), PhiFamily(q)


def test_constant_v_gives_exact_zero():
    g, h, _, fam = _fields(21, 2.0)
    v = Field(g, np.full(h.values.shape, 0.1))
    res = lemma41_residual(g, h, v, fam).values
    assert np.abs(res).max() <= 1e-11 * np.abs(h.values).max()


def test_chain_rule_case_converges():
    errs = []
    for n in (21, 41, 81):
        g, _, v, fam = _fields(n, 1.0)
        one = Field(g, np.ones(v.values.shape))
        errs.append(np.abs(lemma41_residual(g, one, v, fam).values).max())
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


@pytest.mark.parametrize("q", [-1.0, 0.5, 2.0])
def test_second_order_convergence(q):
    errs = []
    for n in (21, 41, 81):
        errs.append(np.abs(lemma41_residual(*_fields(n, q)).values).max())
    ratio = errs[1] / errs[2]
    assert 3.5 <= ratio <= 4.5


def test_residual_rejects_bad_v_and_h():
    g, h, v, _ = _fields(11, 2.0)
    bad = Field(g, np.full(v.values.shape, 1.5))
    with pytest.raises(PhiDomainError):
        lemma41_residual(g, h, bad, PhiFamily(2.0))
    with pytest.raises(ValueError):
        lemma41_residual(g, Field(g, -h.values), v, PhiFamily(2.0))
