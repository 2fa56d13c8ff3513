"""Small closed-form identities of the builtin frame and the numerical pipeline."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from abnormalkit.abnormal import NotSingularError, abnormal_covector
from abnormalkit.flow import Control, endpoint, point_at, pushforward_field, transport
from abnormalkit.hessian import forms_at, inertia
from abnormalkit.jacobi import conjugate_time_table, shooting_determinant
from abnormalkit.verify import random_rotations
from abnormalkit.vfcore import (
    VariableIndexError,
    expression_frame,
    lie_bracket,
    matrix_group_frame,
    parse_field,
    so3_generators,
)

T = so3_generators()
R2 = np.sqrt(2.0)


def test_expression_field_values():
    assert np.allclose(parse_field("x2, -x1", 2)(np.array([1.0, 0.0])), [0.0, -1.0])
    with pytest.raises(VariableIndexError):
        parse_field("x3, x1*x2", 2)


def test_builtin_fields_at_identity(engel):
    x0 = engel.base_point
    assert np.allclose(engel.X1(x0), np.concatenate([((T[0] + T[1]) / R2).ravel(), [R2]]))
    assert np.allclose(engel.X2(x0), np.concatenate([(T[0] / R2).ravel(), [1 / R2]]))


def test_builtin_bracket_at_identity(engel):
    x0 = engel.base_point
    Y = lie_bracket(engel.X1, engel.X2, x0)
    assert np.allclose(Y, np.concatenate([(-T[2] / 2).ravel(), [0.0]]), atol=1e-14)
    assert np.allclose(engel.to_tangent(x0, Y), [0.0, 0.0, -0.5, 0.0], atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_left_invariant_bracket_is_commutator(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 4))
    frame = matrix_group_frame("random", T, 1, a, b)
    R = random_rotations(rng, 1)[0]
    x = np.concatenate([R.ravel(), rng.normal(size=1)])
    A, B = np.tensordot(a[:3], T, axes=1), np.tensordot(b[:3], T, axes=1)
    expected = np.concatenate([(R @ (A @ B - B @ A)).ravel(), [0.0]])
    assert np.allclose(lie_bracket(frame.X1, frame.X2, x), expected, atol=1e-12)


@pytest.mark.parametrize("s", [0.7, 5.0, 19.0])
def test_reference_curve_stays_in_the_group(engel, s):
    R = point_at(engel, s)[:9].reshape(3, 3)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_time_change_of_the_reference_curve(engel):
    # v2 = 0 with mean(v1) = 0 only reparametrizes the X1 trajectory
    control = Control(np.array([0.0, 0.25, 0.5, 1.0]), np.array([0.4, -0.8, 0.2]), np.zeros(3))
    assert abs(control.mean_v1()) < 1e-15
    assert np.allclose(endpoint(engel, control), point_at(engel, 1.0), atol=1e-9)


def test_transport_over_zero_time_is_identity(engel, rng):
    v = rng.normal(size=engel.ambient_dim)
    assert np.array_equal(transport(engel, 1.3, 1.3, v), v)


def test_pushforward_to_its_own_time_is_the_base_field(engel):
    x = point_at(engel, 2.0)
    field = pushforward_field(engel, engel.X2, 2.0, 2.0)
    assert np.allclose(field(x), engel.X2(x), atol=1e-15)


def test_covector_annihilates_both_fields_along_the_curve(engel):
    data = abnormal_covector(engel, 3.0, 200)
    pts = data.curve.points
    assert np.abs(np.einsum("ki,ki->k", data.eta, engel.X1.many(pts))).max() < 1e-10
    assert np.abs(np.einsum("ki,ki->k", data.eta, engel.X2.many(pts))).max() < 1e-10


def test_generic_frame_is_not_singular():
    frame = expression_frame("generic", 4, ["1", "x3", "0", "x2*x2"], ["0", "1", "x1", "sin(x1)"])
    with pytest.raises(NotSingularError):
        abnormal_covector(frame, 2.0, 100)


@pytest.mark.parametrize("s", [1.0, 4.0, 11.0])
def test_shooting_consistency(engel, s):
    data = abnormal_covector(engel, s, 200)
    for case in "ab":
        assert shooting_determinant(data, case).consistency_residual < 1e-6


def test_short_arcs_have_no_negative_directions(engel):
    for variant, form in forms_at(engel, 0.5, 100).items():
        neg, null, _ = inertia(form)
        assert (neg, null) == (0, 0), variant


def test_inertia_ignores_the_kernel_basis(engel):
    form = forms_at(engel, 4.0, 60)["F"]
    K = form.kernel_basis()
    Q = ortho_group.rvs(K.shape[1], random_state=5)
    rotated = np.linalg.eigvalsh(Q.T @ K.T @ form.matrix @ K @ Q)
    assert np.allclose(rotated, inertia(form).eigenvalues, atol=1e-12)


def test_zero_sets_are_stable_under_grid_refinement(engel):
    names = ["jacobi-F", "jacobi-Ext"]
    coarse = conjugate_time_table(engel, (0.0, 10.0), names, N=200, scan_step=0.05)
    fine = conjugate_time_table(engel, (0.0, 10.0), names, N=400, scan_step=0.05)
    for name in names:
        a, b = [z.s for z in coarse[name]], [z.s for z in fine[name]]
        assert len(a) == len(b) > 0
        assert np.abs(np.subtract(a, b)).max() < 2e-4
