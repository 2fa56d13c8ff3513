from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abnormalkit.vfcore import (
    AccuracyWarning,
    AffineField,
    CallableField,
    DiffConfig,
    ExprField,
    ad_fields,
    bracket_field,
    lie_bracket,
)

coef = st.floats(-2.0, 2.0, allow_nan=False)


def poly_field(a, b, c):
    return ExprField.parse([f"{a}*x2*x3 + 1", f"sin({b}*x1) - x3", f"{c}*x1*x1 + x2"], 3)


def test_affine_closed_form_matches_generic_bracket(rng):
    A, B = rng.normal(size=(2, 4, 4))
    ca, cb = rng.normal(size=(2, 4))
    fa, fb = AffineField(A, ca), AffineField(B, cb)
    generic_a = CallableField(lambda x: A @ x + (ca if np.ndim(x) == 1 else ca[:, None]), 4, dual_safe=True)
    generic_b = CallableField(lambda x: B @ x + (cb if np.ndim(x) == 1 else cb[:, None]), 4, dual_safe=True)
    closed = bracket_field(fa, fb)
    assert isinstance(closed, AffineField)
    for x in rng.normal(size=(5, 4)):
        assert np.allclose(closed(x), lie_bracket(generic_a, generic_b, x), atol=1e-12)
        # [A x + a, B x + b] = (B A - A B) x + B a - A b
        assert np.allclose(closed(x), (B @ A - A @ B) @ x + B @ ca - A @ cb, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(coef, coef, coef, st.lists(coef, min_size=3, max_size=3))
def test_bracket_is_antisymmetric(a, b, c, x):
    f, g = poly_field(a, b, c), poly_field(c, a, b)
    x = np.array(x)
    assert np.allclose(lie_bracket(f, g, x), -lie_bracket(g, f, x), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(coef, coef, coef, st.lists(coef, min_size=3, max_size=3))
def test_jacobi_identity(a, b, c, x):
    f, g, h = poly_field(a, b, c), poly_field(b, c, a), poly_field(c, a, b)
    x = np.array(x)
    total = (
        bracket_field(f, bracket_field(g, h))(x)
        + bracket_field(g, bracket_field(h, f))(x)
        + bracket_field(h, bracket_field(f, g))(x)
    )
    assert np.allclose(total, 0.0, atol=1e-10)


def test_finite_differences_agree_with_duals(rng):
    f, g = poly_field(0.3, 1.1, -0.7), poly_field(1.0, -0.4, 0.2)
    fd = DiffConfig("fd", 1e-5)
    for x in rng.normal(size=(5, 3)):
        assert np.allclose(lie_bracket(f, g, x, fd), lie_bracket(f, g, x), atol=1e-7)


def test_deep_finite_difference_brackets_warn():
    f, g = poly_field(0.3, 1.1, -0.7), poly_field(1.0, -0.4, 0.2)
    with pytest.warns(AccuracyWarning):
        ad_fields(f, g, 3, DiffConfig("fd"))


def test_batched_evaluation_matches_pointwise(rng):
    f = poly_field(0.5, 2.0, -1.0)
    g = bracket_field(f, poly_field(1.0, 0.1, 0.4))
    xs = rng.normal(size=(7, 3))
    assert np.allclose(g.many(xs), np.array([g(x) for x in xs]), atol=1e-13)
    jac = f.jacobian_many(xs)
    assert np.allclose(jac[2], f.jacobian(xs[2]))


def test_jacobian_of_expression_field():
    f = ExprField.parse(["x1*x2", "sin(x1)"], 2)
    x = np.array([0.4, -1.5])
    assert np.allclose(f.jacobian(x), [[x[1], x[0]], [np.cos(x[0]), 0.0]])


def test_callable_field_without_dual_support_uses_differences():
    f = CallableField(lambda x: np.array([x[1] ** 2, np.tanh(x[0])]), 2)
    g = AffineField(np.eye(2), np.zeros(2))
    x = np.array([0.3, 0.8])
    # [g, f] = Df x - f for g = identity
    expected = np.array([2 * x[1] * x[1], x[0] / np.cosh(x[0]) ** 2]) - f(x)
    assert np.allclose(lie_bracket(g, f, x), expected, atol=1e-8)


def test_mismatched_dimensions():
    with pytest.raises(ValueError):
        bracket_field(poly_field(1, 1, 1), ExprField.parse(["x1", "x2"], 2))
