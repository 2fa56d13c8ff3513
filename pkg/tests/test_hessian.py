from __future__ import annotations

import numpy as np
import pytest

from abnormalkit.abnormal import abnormal_covector
from abnormalkit.flow import pushforward_field
from abnormalkit.hessian import (
    ConstraintRankWarning,
    assemble_form,
    bracket_kernels,
    forms_at,
    hessian_zeros,
    index_profile,
    inertia,
)
from abnormalkit.vfcore import bracket_field, builtin_frame, lie_bracket


def transported_brackets(data, k, j):
    """<lambda, [gdot_k, gdot_j]>, <lambda, [gdot_j, g_j]> and <lambda, [X2, gdot_j]> from explicit pushforward fields."""
    frame, curve = data.frame, data.curve
    s, y, lam = curve.s, curve.end, data.lambda_ambient
    tk, tj = curve.times[curve.mid][[k, j]]
    Y = bracket_field(frame.X1, frame.X2)
    gdot_k = pushforward_field(frame, Y, tk, s, steps=200)
    gdot_j = pushforward_field(frame, Y, tj, s, steps=200)
    g_j = pushforward_field(frame, frame.X2, tj, s, steps=200)
    return (
        lam @ lie_bracket(gdot_k, gdot_j, y),
        lam @ lie_bracket(gdot_j, g_j, y),
        lam @ lie_bracket(frame.X2, gdot_j, y),
    )


@pytest.mark.parametrize("name", ["engel", "warped"])
def test_kernels_match_pushforward_brackets(name, request):
    frame = request.getfixturevalue(name)
    data = abnormal_covector(frame, 2.5, 40)
    kern = bracket_kernels(data)
    for k, j in [(3, 17), (10, 31), (0, 39)]:
        B, leg, goh = transported_brackets(data, k, j)
        scale = max(1.0, np.max(np.abs(kern.kernel)))
        assert abs(kern.kernel[k, j] - B) < 1e-7 * scale
        assert abs(kern.legendre[j] - leg) < 1e-7 * max(1.0, abs(leg))
        assert abs(kern.goh[j] - goh) < 1e-7 * max(1.0, abs(goh))


def test_kernel_is_antisymmetric(engel):
    kern = bracket_kernels(abnormal_covector(engel, 3.0, 60))
    assert np.allclose(kern.kernel, -kern.kernel.T, atol=1e-12)


def test_constraint_ranks(engel):
    forms = forms_at(engel, 4.0, 100)
    assert forms["F"].constraint_rank == 2
    assert forms["Ext"].constraint_rank == 3
    for form in forms.values():
        R = form.restricted()
        assert R.shape == (101 - form.constraint_rank,) * 2
        assert np.allclose(R, R.T, atol=1e-12)


def test_restriction_matches_null_space_projection(engel):
    form = forms_at(engel, 5.0, 60)["F"]
    Z = form.kernel_basis()
    assert np.allclose(np.linalg.eigvalsh(Z.T @ form.matrix @ Z), np.linalg.eigvalsh(form.restricted()), atol=1e-12)


def test_unknown_variant(engel):
    kern = bracket_kernels(abnormal_covector(engel, 1.0, 20))
    with pytest.raises(ValueError):
        assemble_form(kern, "G")


@pytest.mark.parametrize("s, pair", [(2.0, (0, 0)), (4.0, (1, 0)), (7.5, (2, 1)), (9.2, (2, 2)), (11.0, (3, 2))])
def test_index_pairs(engel, s, pair):
    (row,) = index_profile(engel, [s], 200)
    assert row.pair == pair
    assert row.nullF == row.nullExt == 0


@pytest.mark.parametrize("N", [100, 200, 400])
def test_inertia_is_stable_under_refinement(engel, N):
    forms = forms_at(engel, 11.0, N)
    assert inertia(forms["F"]).negative == 3
    assert inertia(forms["Ext"]).negative == 2
    counts = inertia(forms["F"])
    assert sum(counts) == N + 1 - forms["F"].constraint_rank


def test_spectral_gap_away_from_conjugate_times(engel):
    for s in (2.0, 4.5, 8.0):
        inv = inertia(forms_at(engel, s, 200)["F"])
        assert inv.min_abs > 1e3 * inv.threshold


def test_null_eigenvalue_converges_at_third_order(engel):
    vals = []
    for N in (100, 200, 400):
        vals.append(inertia(forms_at(engel, np.pi, N)["F"]).min_abs)
    ratios = np.array(vals[:-1]) / np.array(vals[1:])
    # second-order error in the crossing times the factor h carried by every entry
    assert np.all((ratios > 6.5) & (ratios < 9.5))


def test_hessian_zeros_on_example(engel):
    zs = hessian_zeros(engel, (0.0, 7.0), 200, "F")
    assert np.allclose([z.s for z in zs], [np.pi, 2 * np.pi], atol=1e-6)
    assert hessian_zeros(engel, (3.0, 3.0), 200, "F") == []


def test_hessian_zeros_on_nonlinear_frame(damped):
    zs = hessian_zeros(damped, (0.0, 3.5), 100, "F", scan_step=1.0)
    assert len(zs) == 1 and abs(zs[0].s - np.pi) < 1e-6


def test_extended_form_degenerates_without_strictness():
    kern = bracket_kernels(abnormal_covector(builtin_frame("martinet"), 2.0, 40))
    with pytest.warns(ConstraintRankWarning):
        assemble_form(kern, "Ext")
