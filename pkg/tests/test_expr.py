import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabound.expr import (Call, EvaluationError, ParseError, parse_expression, to_source)
from parabound.fields import FnSpec


def test_examples():
    assert parse_expression("1 - x^2")(x=0.5) == pytest.approx(0.75)
    e = parse_expression("exp(-t)*sin(3.14159*x)")
    assert isinstance(e.tree.left, Call)
    assert e(x=0.5, t=0.0) == pytest.approx(np.sin(3.14159 * 0.5))


def test_unary_minus_after_operator_rejected():
    with pytest.raises(ParseError, match="unexpected '-'"):
        parse_expression("2*-x")
    assert parse_expression("2*(-x)")(x=3.0) == -6.0


@pytest.mark.parametrize("src, env, want", [
    ("2^3^2", {}, 512.0),
    ("-2^2", {}, -4.0),
    ("8/4/2", {}, 1.0),
    ("1 - 2 - 3", {}, -4.0),
    ("min(x, 2) + max(x, 2)", {"x": 5.0}, 7.0),
    ("coth(r)", {"r": 1.0}, 1.0 / np.tanh(1.0)),
    ("sqrt(abs(-4))*log(exp(2))", {}, 4.0),
    ("pi", {}, np.pi),
])
def test_precedence(src, env, want):
    assert parse_expression(src)(**env) == pytest.approx(want)


@pytest.mark.parametrize("src", ["", "1 +", "(x", "x y", "foo(x)", "q + 1", "sin(x, y)", "1 ^ ^ 2"])
def test_syntax_errors(src):
    with pytest.raises(ParseError):
        parse_expression(src)


def test_error_position():
    with pytest.raises(ParseError) as info:
        parse_expression("1 + * 2")
    assert info.value.pos == 4


def test_evaluation_errors():
    with pytest.raises(EvaluationError):
        parse_expression("log(x)")(x=-1.0)
    with pytest.raises(EvaluationError):
        parse_expression("1/x")(x=0.0)
    with pytest.raises(EvaluationError):
        parse_expression("x + t")(x=1.0)


def test_vectorized():
    x = np.linspace(0, 1, 5)
    assert np.allclose(parse_expression("x*(1-x)")(x=x), x * (1 - x))


def test_fnspec_variables():
    f = FnSpec.expr("r^2 + t")
    assert not FnSpec.expr("x^2").time_dependent
    assert f(np.array([2.0]), 1.0)[0] == 5.0
    g = FnSpec.expr("x*y")
    assert g((np.array([2.0]), np.array([3.0])))[0] == 6.0


# -- round trip over random trees --------------------------------------------

_leaf = st.one_of(st.sampled_from(["x", "y", "t", "r", "pi"]),
                  st.floats(0, 100, allow_nan=False).map(lambda v: repr(round(v, 3))))


def _compose(children):
    bin_ = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda a: f"({a[0]}) {a[1]} ({a[2]})")
    neg = children.map(lambda a: f"-({a})")
    fn1 = st.tuples(st.sampled_from(["sin", "cos", "exp", "abs", "sqrt"]), children).map(
        lambda a: f"{a[0]}({a[1]})")
    fn2 = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda a: f"{a[0]}({a[1]}, {a[2]})")
    return st.one_of(bin_, neg, fn1, fn2)


sources = st.recursive(_leaf, _compose, max_leaves=12)


@given(sources)
@settings(max_examples=300)
def test_print_parse_fixed_point(src):
    e = parse_expression(src)
    printed = to_source(e.tree)
    again = parse_expression(printed)
    assert again.tree == e.tree
    assert to_source(again.tree) == printed
