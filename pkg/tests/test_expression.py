import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrigidity.expression import (BinOp, Call, EvaluationError, ExpressionError, Neg, Num, Var,
                                   evaluate, margin_truncation, parse_expression,
                                   sample_expression, to_text)
from pbrigidity.field_core import make_grid


@pytest.mark.parametrize("text,x,y,value", [
    ("x*y", 2, 3, 6),
    ("sin(pi*x)^2", 0.5, 7, 1),
    ("-x^2", 3, 0, 9),
    ("2^3^2", 0, 0, 512),
    ("2^-1", 0, 0, 0.5),
    ("1 - 2 - 3", 0, 0, -4),
    ("8 / 4 / 2", 0, 0, 1),
    ("abs(-x) + sqrt(y)", -2, 9, 5),
    (" exp( 0 ) ", 0, 0, 1),
    ("1.5e2 + .5", 0, 0, 150.5),
    ("bump(0, 0, 1)", 0, 0, 1),
    ("bump(0, 0, 1)", 1, 0, 0),
])
def test_evaluation(text, x, y, value):
    assert evaluate(parse_expression(text), x, y) == pytest.approx(value, rel=1e-14)


def test_tree_shapes():
    assert parse_expression("-x^2") == BinOp("^", Neg(Var("x")), Num(2.0))
    assert parse_expression("2^3^4") == BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(4.0)))
    assert parse_expression("cos(y)") == Call("cos", (Var("y"),))


@pytest.mark.parametrize("text,offset", [
    ("x+", 2), ("(x", 2), ("x)", 1), ("foo(x)", 0), ("bump(x)", 0),
    ("sin x", 4), ("3 $", 2), ("", 0), ("x y", 2), ("sin(x,)", 6), ("1e999", 0),
])
def test_errors_carry_offsets(text, offset):
    with pytest.raises(ExpressionError) as info:
        parse_expression(text)
    assert info.value.offset == offset


def test_division_by_zero_reports_node():
    g = make_grid(0, 1, 0, 1, 5, 5)
    with pytest.raises(EvaluationError) as info:
        sample_expression(parse_expression("1/(x-0.5)"), g)
    assert info.value.node == (2, 0)
    assert info.value.coords == (0.5, 0.0)


def test_bump_radius_must_be_positive():
    with pytest.raises(EvaluationError):
        evaluate(parse_expression("bump(0,0,0)"), 0.5, 0.5)


def test_sampling_examples():
    g = make_grid(0, 1, 0, 1, 33, 33)
    assert not sample_expression(parse_expression("0"), g).values.any()
    b = sample_expression(parse_expression("bump(0.5,0.5,0.4)"), g, 2)
    assert b.values[16, 16] == 1.0 and not b.values[:2].any()
    assert margin_truncation(parse_expression("bump(0.5,0.5,0.4)"), g, 2) == 0.0
    H = sample_expression(parse_expression("x"), g, 3)
    X, _ = g.mesh()
    assert np.array_equal(H.values[3:-3, 3:-3], X[3:-3, 3:-3])
    assert not H.values[:3].any() and not H.values[:, -3:].any()
    assert margin_truncation(parse_expression("x"), g, 3) == 1.0


def test_torus_sampling_ignores_margin():
    g = make_grid(0, 1, 0, 1, 16, 16, "torus")
    H = sample_expression(parse_expression("x + 1"), g, 3)
    assert H.values[0, 0] == 1.0 and H.support_margin == 0


_leaf = st.one_of(
    st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(Num),
    st.sampled_from(["x", "y", "pi"]).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda t: BinOp(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "sqrt", "abs"]), children).map(
            lambda t: Call(t[0], (t[1],))),
        st.tuples(children, children, children).map(lambda t: Call("bump", t)),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(_leaf, _extend, max_leaves=12))
def test_print_parse_round_trip(tree):
    text = to_text(tree)
    assert parse_expression(text) == tree
    assert to_text(parse_expression(text)) == text


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_matches_python_math(x, y):
    e = parse_expression("sin(x)*cos(y) - exp(-x^2)/(1 + y^2) + abs(x - y)^0.5")
    # unary minus binds tighter than ^, so -x^2 is (-x)^2
    ref = math.sin(x) * math.cos(y) - math.exp((-x) ** 2) / (1 + y * y) + abs(x - y) ** 0.5
    assert evaluate(e, x, y) == pytest.approx(ref, rel=1e-12, abs=1e-12)
