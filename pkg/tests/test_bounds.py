import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabound.bounds import (LOWER, TWO_SIDED, UPPER, chi_field, thm31_bound, thm32_bound,
                              thm33_window, window_constant)
from parabound.duhamel import S_field
from parabound.fields import Field
from parabound.grid import Domain, build_grid
from parabound.kernel import Kernel

LINE = Kernel(Domain.real_line())


def _grid():
    return build_grid(Domain.interval(0, 1), 11, 1.0, 10)


def _const(g, c):
    return Field(g, np.full((len(g.times),) + g.shape, float(c)))


def _line_grid():
    return build_grid(Domain.real_line(), 61, 1.0, 10, R_trunc=16)


def _cyl(g):
    m = np.broadcast_to(g.interior_mask & g.trusted_mask, (len(g.times),) + g.shape).copy()
    m[0] = False
    return m


@pytest.mark.parametrize("q", [-2.0, -1.0, 0.5, 1.0, 2.0, 3.0])
def test_zero_potential_returns_h(q):
    g = _grid()
    h = Field(g, 1.0 + np.sin(np.pi * g.axes[0])[None, :] + g.times[:, None])
    zero = _const(g, 0.0)
    b = thm31_bound(q, h, zero, zero if 0 < q < 1 else None)
    assert np.allclose(b.bound.values, h.values, rtol=1e-15)
    assert all(v["holds_everywhere"] for v in b.summary.values() if v["required"])
    assert b.direction == (UPPER if q < 0 else LOWER)


def test_q1_line_example():
    g = _line_grid()
    t = g.times[:, None] * np.ones(g.shape)
    h = Field(g, 1.0 + t)
    S = S_field(LINE, g, "1 + t")
    cyl = _cyl(g)
    assert np.abs(S.values - (t + t**2 / 2))[cyl].max() <= 1e-8
    b = thm31_bound(1, h, S)
    want = (1 + t) * np.exp(-(t + t**2 / 2) / (1 + t))
    assert np.abs(b.bound.values - want)[cyl].max() <= 1e-8


def test_strictness_flag_masks():
    g = _grid()
    h = _const(g, 1.0)
    ok = thm31_bound(2, h, _const(g, 1.5))
    assert ok.flags["strict"].all() and np.isfinite(ok.bound.values).all()
    bad = thm31_bound(2, h, _const(g, -1.5))
    assert not bad.flags["strict"].any()
    assert np.isnan(bad.bound.values).all() and bad.bound.mask.all()
    assert bad.summary["strict"]["required"] and not bad.summary["strict"]["holds_everywhere"]


def test_q_zero_and_missing_chi():
    g = _grid()
    h = _const(g, 1.0)
    with pytest.raises(ValueError):
        thm31_bound(0, h, h)
    with pytest.raises(ValueError):
        thm31_bound(0.5, h, h)
    with pytest.raises(ValueError):
        thm32_bound(0.5, h)
    with pytest.raises(ValueError):
        thm32_bound(0, h)


def test_boundary_nodes_take_limit():
    g = _grid()
    x = g.axes[0]
    h = Field(g, np.broadcast_to(np.sin(np.pi * x), (len(g.times), len(x))).copy())
    h.values[:, 0] = h.values[:, -1] = 0.0
    b = thm31_bound(2, h, _const(g, 0.3))
    assert np.all(b.bound.values[:, 0] == 0) and b.flags["boundary_limit"][:, 0].all()


def test_thm32_line_examples():
    g = _line_grid()
    cyl = _cyl(g)
    t = g.times[:, None] * np.ones(g.shape)
    b = thm32_bound(2, S_field(LINE, g, 1.0))
    assert np.abs(b.bound.values - 1 / np.where(t > 0, t, 1))[cyl].max() <= 1e-8
    b = thm32_bound(-1, S_field(LINE, g, -1.0))
    assert b.flags["strict"][cyl].all()
    assert np.abs(b.bound.values - np.sqrt(2 * t))[cyl].max() <= 1e-8
    assert b.direction == UPPER
    b = thm32_bound(1, S_field(LINE, g, 0.0))
    assert np.all(b.bound.values == 1.0)


def test_thm32_q1_shift_by_constant():
    g = _line_grid()
    cyl = _cyl(g)
    t = g.times[:, None] * np.ones(g.shape)
    V = "0.5 + 0.3*exp(-x^2)"
    base = thm32_bound(1, S_field(LINE, g, V)).bound.values
    for c in (-0.7, 1.3):
        shifted = thm32_bound(1, S_field(LINE, g, f"{V} + ({c})")).bound.values
        assert np.abs(shifted - base * np.exp(-c * t))[cyl].max() <= 1e-8 * np.abs(base).max()


def test_window_constants():
    assert window_constant(-1) == pytest.approx(0.25, rel=1e-15)
    assert window_constant(2) == pytest.approx(0.25, rel=1e-15)
    assert window_constant(3) == pytest.approx((2 / 3) ** 3 / 2, rel=1e-15)


def test_window_examples():
    g = _grid()
    h = _const(g, 2.0)
    env = thm33_window(-1, h, _const(g, 0.0))
    assert env.direction == TWO_SIDED
    assert np.allclose(env.bound.values, 1.0) and np.allclose(env.upper.values, 2.0)
    # S <= h/4 at the threshold, one ulp beyond fails
    at = thm33_window(-1, h, _const(g, 0.5))
    assert at.flags["window"].all()
    past = thm33_window(-1, h, _const(g, np.nextafter(0.5, 1)))
    assert not past.flags["window"].any()
    env2 = thm33_window(2, h, _const(g, -0.5))
    assert env2.flags["window"].all()
    assert np.all(env2.bound.values <= env2.upper.values)
    assert not thm33_window(2, h, _const(g, -0.6)).flags["window"].any()
    with pytest.raises(ValueError):
        thm33_window(0.5, h, h)


def test_chi_field():
    g = _grid()
    assert np.all(chi_field(_const(g, 0.2)).values == 1)
    assert np.all(chi_field(_const(g, 0.0)).values == 0)
    mixed = Field(g, np.broadcast_to(g.axes[0] - 0.45, (len(g.times), 11)).copy())
    assert np.array_equal(chi_field(mixed).values[0], (g.axes[0] > 0.45).astype(float))
    assert np.all(chi_field(_const(g, 1e-13), threshold=1e-12).values == 0)
    with pytest.raises(ValueError):
        chi_field(mixed, threshold=-1)


# -- properties ---------------------------------------------------------------

def _point(g, v):
    return Field(g, np.full((len(g.times),) + g.shape, float(v)))


G1 = build_grid(Domain.interval(0, 1), 5, 1.0, 1)


@given(q=st.one_of(st.just(1.0), st.floats(1.1, 4), st.floats(-4, -0.1)),
       h=st.floats(0.1, 10), s1=st.floats(-5, 5), s2=st.floats(-5, 5))
@settings(max_examples=300)
def test_nonincreasing_in_S(q, h, s1, s2):
    lo, hi = sorted((s1, s2))
    a = thm31_bound(q, _point(G1, h), _point(G1, lo)).bound.values[0, 0]
    b = thm31_bound(q, _point(G1, h), _point(G1, hi)).bound.values[0, 0]
    if np.isfinite(a) and np.isfinite(b):
        assert b <= a * (1 + 1e-14)
    if q > 1:
        # valid sets are up-closed in S: a valid smaller S implies a valid larger one
        assert not (np.isfinite(a) and not np.isfinite(b))


@given(q=st.floats(1.1, 4), h=st.floats(0.1, 10), k=st.integers(1, 60))
@settings(max_examples=200)
def test_flag_trips_before_overflow(q, h, k):
    # approach the strictness boundary S = -h/(q-1) from the valid side
    edge = -h / (q - 1)
    S = edge * (1 - 2.0 ** -k)
    b = thm31_bound(q, _point(G1, h), _point(G1, S))
    val = b.bound.values[0, 0]
    valid = b.flags["valid"][0, 0]
    assert (valid and np.isfinite(val)) or (not valid and np.isnan(val))
    if not b.flags["strict"][0, 0]:
        assert not valid
    over = thm31_bound(q, _point(G1, h), _point(G1, edge * (1 + 1e-9)))
    assert not over.flags["strict"].any() and np.isnan(over.bound.values).all()


@given(S=st.floats(-3, 3), t=st.floats(0.1, 2))
@settings(max_examples=100)
def test_thm32_equals_thm31_with_unit_h_q1(S, t):
    a = thm32_bound(1, _point(G1, S)).bound.values[0, 0]
    b = thm31_bound(1, _point(G1, 1.0), _point(G1, S)).bound.values[0, 0]
    assert a == pytest.approx(b, rel=1e-15)


@pytest.mark.parametrize("q, S", [(2.0, 0.7), (3.0, 1.2), (-1.0, -0.4), (-2.5, -1.1), (0.5, -0.8)])
def test_thm32_is_thm31_limit_in_constant_h(q, S):
    # with h = lam, S[h^q V] = lam^q S[V]; the h-free bound is the limit of
    # the h-bound as lam -> inf (q > 1) or lam -> 0 (q < 1)
    target = thm32_bound(q, _point(G1, S), _point(G1, S) if 0 < q < 1 else None).bound.values[0, 0]
    # the gap shrinks like lam^-(q-1) or lam^(1-q); step it by decades
    sign = 1.0 if q > 1 else -1.0
    lams = [10.0 ** (sign * k / abs(q - 1)) for k in (2, 4, 6)]
    errs = []
    for lam in lams:
        Sh = _point(G1, lam**q * S)
        b = thm31_bound(q, _point(G1, lam), Sh, Sh if 0 < q < 1 else None).bound.values[0, 0]
        errs.append(abs(b - target))
    assert errs[-1] <= 1e-4 * abs(target)
    assert errs[0] > errs[1] > errs[2]
