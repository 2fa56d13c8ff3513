from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abnormalkit.vfcore import ExprError, ExprSyntaxError, UnknownIdentifierError, VariableIndexError, jvp, parse, parse_field
from abnormalkit.vfcore.expr import Bin, Call, Neg, Num, Var

DIM = 3

leaves = st.one_of(
    st.integers(0, DIM - 1).map(Var),
    st.floats(0.1, 9.0, allow_nan=False).map(lambda v: Num(round(v, 3))),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*"), children, children).map(lambda t: Bin(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda t: Call(t[0], t[1])),
        children.map(Neg),
    )


trees = st.recursive(leaves, _extend, max_leaves=8)
points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=DIM, max_size=DIM).map(np.array)


def test_precedence_and_functions():
    x = np.array([0.5, 2.0, -1.0])
    e = parse("x1 + x2 * x3 - -x1 / 2 + sin(pi * x1) * exp(x3) + sqrt(x2)", DIM)
    expected = 0.5 + 2.0 * -1.0 + 0.25 + math.sin(math.pi * 0.5) * math.exp(-1.0) + math.sqrt(2.0)
    assert np.isclose(e.eval(x), expected)


def test_scientific_notation_and_left_associativity():
    assert parse("1e-3 * 2").eval(np.zeros(1)) == pytest.approx(2e-3)
    assert parse("8 / 4 / 2").eval(np.zeros(1)) == pytest.approx(1.0)
    assert parse("5 - 3 - 1").eval(np.zeros(1)) == pytest.approx(1.0)


@settings(max_examples=150, deadline=None)
@given(trees, points)
def test_render_parse_round_trip(tree, x):
    text = tree.render()
    again = parse(text, DIM)
    assert again.render() == text
    assert np.isclose(again.eval(x), tree.eval(x), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(trees, points, st.integers(0, DIM - 1))
def test_symbolic_derivative_matches_dual(tree, x, k):
    e = np.zeros(DIM)
    e[k] = 1.0
    _, der = jvp(tree.eval, x, e)
    assert np.isclose(tree.diff(k).eval(x), der, rtol=1e-10, atol=1e-10)


def test_field_parsing_splits_top_level_commas():
    f = parse_field("sin(x1), x1*x2, 1", 3)
    assert len(f.components) == 3
    assert np.allclose(f(np.array([0.0, 2.0, 3.0])), [0.0, 0.0, 1.0])
    assert str(parse_field(str(f), 3)) == str(f)


@pytest.mark.parametrize(
    "text, error",
    [
        ("x1 +", ExprSyntaxError),
        ("(x1", ExprSyntaxError),
        ("x1 $ 2", ExprSyntaxError),
        ("x1 x2", ExprSyntaxError),
        ("tanh(x1)", UnknownIdentifierError),
        ("x4", VariableIndexError),
        ("x0", VariableIndexError),
    ],
)
def test_malformed_input(text, error):
    with pytest.raises(error):
        parse(text, DIM)


def test_syntax_error_reports_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + * 2", DIM)
    assert info.value.position == 5


def test_wrong_component_count():
    with pytest.raises(ExprError, match="2 components"):
        parse_field("x1, x2", 3)
