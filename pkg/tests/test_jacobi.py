from __future__ import annotations

import numpy as np
import pytest

from abnormalkit.abnormal import abnormal_covector
from abnormalkit.hessian import hessian_zeros
from abnormalkit.jacobi import (
    DimensionError,
    IndependenceError,
    conjugate_time_table,
    conjugate_times,
    engel_indicator,
    indicator,
    locate_zeros,
    scan_grid,
    shooting_determinant,
    structural_functions,
)
from abnormalkit.verify import a_ext, a_f
from abnormalkit.vfcore import builtin_frame, expression_frame

HORIZONS = [0.7, 2.0, 4.4, 7.1, 10.3, 13.0]


def test_structural_functions_of_example(engel):
    sf = structural_functions(engel, np.linspace(0, 6, 13))
    assert np.allclose(sf.alpha[0], -1.0, atol=1e-12)
    assert np.allclose(sf.alpha[1], 0.0, atol=1e-12)
    assert np.allclose(sf.beta, 0.5, atol=1e-12)
    assert sf.residual < 1e-12


def test_structural_functions_of_damped_frame(damped):
    sf = structural_functions(damped, np.linspace(0, 3, 7))
    assert np.allclose(sf.alpha[0], -1.01, atol=1e-10)
    assert np.allclose(sf.alpha[1], 0.2, atol=1e-10)
    assert np.allclose(sf.beta, 0.0, atol=1e-10)


@pytest.mark.parametrize(
    "name, closed_form",
    [("jacobi-F", a_f), ("jacobi-Ext", a_ext), ("engel-F", a_f), ("engel-Ext", a_ext)],
)
def test_indicators_are_multiples_of_closed_forms(engel, name, closed_form):
    ratios = [indicator(abnormal_covector(engel, s, 400), name) / closed_form(s) for s in HORIZONS]
    assert np.ptp(ratios) < 1e-7 * abs(np.mean(ratios))


def test_shooting_constants(engel):
    data = abnormal_covector(engel, 2.0, 200)
    assert shooting_determinant(data, "a").determinant / np.sin(2.0) == pytest.approx(-np.sqrt(6), rel=1e-9)
    assert shooting_determinant(data, "b").determinant / a_ext(2.0) == pytest.approx(-1.5 * np.sqrt(3), rel=1e-9)
    assert shooting_determinant(data, "a").rank_deficiency == 0


def test_rank_deficiency_at_conjugate_time(engel):
    data = abnormal_covector(engel, np.pi, 400)
    assert shooting_determinant(data, "a").rank_deficiency == 1
    assert shooting_determinant(data, "b").rank_deficiency == 0


def test_example_zero_table(engel):
    table = conjugate_time_table(engel, (0.0, 10.0), N=200, scan_step=0.1)
    r1 = 8.986818916  # 2 x the first positive root of tan(x) = x
    for name in ("jacobi-F", "engel-F"):
        assert np.allclose([z.s for z in table[name]], [np.pi, 2 * np.pi, 3 * np.pi], atol=1e-8)
    for name in ("jacobi-Ext", "engel-Ext"):
        assert np.allclose([z.s for z in table[name]], [2 * np.pi, r1], atol=1e-8)


def test_zero_at_right_end_is_kept(engel):
    zs = conjugate_times(engel, (1.0, 2 * np.pi), "jacobi", "F", N=200, scan_step=0.25)
    assert [round(z.s, 8) for z in zs] == [round(np.pi, 8), round(2 * np.pi, 8)]


def test_damped_frame_conjugate_times(damped):
    zs = conjugate_times(damped, (0.0, 3.5), "jacobi", "F", N=200, scan_step=0.5)
    assert len(zs) == 1 and abs(zs[0].s - np.pi) < 1e-9


def test_general_order_agrees_with_hessian(so3_plane):
    shooting = [z.s for z in conjugate_times(so3_plane, (0.0, 10.0), "jacobi", "F", N=200, scan_step=0.1)]
    hessian = [z.s for z in hessian_zeros(so3_plane, (0.0, 10.0), 200, "F")]
    assert len(shooting) == len(hessian) == 2
    assert np.allclose(shooting, hessian, atol=1e-6)


def test_closed_form_needs_dimension_four(so3_plane):
    data = abnormal_covector(so3_plane, 2.0, 50)
    with pytest.raises(DimensionError):
        engel_indicator(data, "F")
    with pytest.raises(DimensionError):
        conjugate_times(so3_plane, (0.0, 1.0), "engel", "F")


def test_jacobi_needs_dimension_four():
    with pytest.raises(DimensionError):
        conjugate_times(builtin_frame("martinet"), (0.0, 1.0), "jacobi", "F")


def test_dependent_brackets_are_rejected():
    frame = expression_frame("dependent", 4, "1, 0, 0, 0", "0, exp(x1), 0, 0")
    with pytest.raises(IndependenceError) as info:
        structural_functions(frame, [0.0, 1.0])
    assert info.value.check == "independence"


def test_unknown_names(engel):
    data = abnormal_covector(engel, 1.0, 20)
    with pytest.raises(ValueError):
        shooting_determinant(data, "c")
    with pytest.raises(ValueError):
        engel_indicator(data, "G")
    with pytest.raises(ValueError):
        conjugate_time_table(engel, (0, 1), ["newton-F"])


def test_locate_zeros_simple_boundary_and_tangential():
    zs = locate_zeros(np.sin, (0.0, 2 * np.pi), 0.1)
    assert np.allclose([z.s for z in zs], [np.pi, 2 * np.pi], atol=1e-10)
    # a double root is only seen when a sample lands close enough to it
    touch = locate_zeros(lambda s: (s - 1.2003) ** 2, (0.0, 3.0), 0.1)
    assert len(touch) == 1 and touch[0].tangential and touch[0].multiplicity == 2
    assert abs(touch[0].s - 1.2003) < 1e-6
    assert locate_zeros(lambda s: (s - 1.25) ** 2, (0.0, 3.0), 0.1) == []
    assert locate_zeros(np.sin, (2.0, 2.0), 0.1) == []
    with pytest.raises(ValueError, match="not isolated"):
        locate_zeros(lambda s: 0.0, (0.0, 1.0), 0.1)


def test_scan_grid_reaches_past_the_end():
    grid = scan_grid((0.0, 1.0), 0.3)
    assert grid[0] == pytest.approx(0.3) and grid[-1] >= 1.0
    with pytest.raises(ValueError):
        scan_grid((0.0, 1.0), 0.0)
