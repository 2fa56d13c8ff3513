"""Conjugate times from the Jacobi system along regular abnormal curves.

On a manifold of dimension ``m + 2`` the brackets ``ad^i X2`` (``ad = ad_X1``)
are assumed to span together with X1, with

    ad^m X2 = beta X1 + sum_{i<m} alpha^i ad^i X2

along the curve. The Jacobi system is integrated backwards from ``s`` with
zero data; a horizon is conjugate when the boundary values at ``t = 0`` are
linearly dependent. Two boundary problems are offered: case ``"a"`` for the
endpoint map and case ``"b"`` for the map extended by the energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.linalg import null_space
from scipy.optimize import brentq, minimize_scalar

from .abnormal import AbnormalData, HypothesisError, abnormal_covector
from .flow import DEFAULT_INTEGRATOR, IntegratorConfig, flow_curve
from .vfcore import ManifoldFrame, ad_fields, bracket_field


class IndependenceError(HypothesisError):
    check = "independence"


class DimensionError(ValueError):
    """Method not defined for this manifold dimension."""


CASES = ("a", "b")


@dataclass(frozen=True, eq=False)
class StructuralFunctions:
    """Coefficients of ``ad^m X2`` along the curve at ``times``."""

    times: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray  # shape (m, len(times))
    residual: float
    conditioning: float


def _order(frame: ManifoldFrame) -> int:
    m = frame.intrinsic_dim - 2
    if m < 2:
        raise DimensionError("the Jacobi system needs a manifold of dimension at least 4")
    return m


def _structural(frame, points, ad_values, tol):
    m = _order(frame)
    stacked = np.stack([frame.X1.many(points)] + list(ad_values[:m]), axis=1)  # (K, m + 1, n)
    maps = frame.coordinate_maps(points)
    basis = frame.to_tangent_many(points, stacked, maps)
    target = frame.to_tangent_many(points, ad_values[m], maps)
    gram = np.einsum("kim,kjm->kij", basis, basis)
    ev = np.linalg.eigvalsh(gram)
    cond = float(np.sqrt(max(np.min(ev[:, 0] / ev[:, -1]), 0.0)))
    if cond < tol:
        raise IndependenceError(
            f"X1, X2 and ad^i X2 (i < {m}) are dependent along the curve (relative singular value {cond:.2e})"
        )
    coef = np.linalg.solve(gram, np.einsum("kim,km->ki", basis, target)[:, :, None])[:, :, 0]
    fit = np.einsum("kij,ki->kj", basis, coef)
    scale = np.maximum(1.0, np.linalg.norm(target, axis=1))
    res = float(np.max(np.linalg.norm(fit - target, axis=1) / scale))
    return coef[:, 0], coef[:, 1:].T, res, cond


def structural_functions(
    frame: ManifoldFrame,
    times: Sequence[float],
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    tol: float = 1e-8,
) -> StructuralFunctions:
    """Least-squares coefficients of ``ad^m X2`` on ``(X1, X2, ..., ad^{m-1} X2)``."""
    m = _order(frame)
    times = np.asarray(times, dtype=float)
    pts = flow_curve(frame, times, config, jacobians=False).points
    ads = ad_fields(frame.X1, frame.X2, m, frame.config)
    values = [f.many(pts) for f in ads]
    beta, alpha, res, cond = _structural(frame, pts, values, tol)
    return StructuralFunctions(times, beta, alpha, res, cond)


@dataclass(frozen=True, eq=False)
class ShootingResult:
    s: float
    case: str
    determinant: float
    boundary: np.ndarray  # boundary values as covectors on the admissible directions
    rank_deficiency: int
    consistency_residual: float


@dataclass(frozen=True, eq=False)
class _JacobiData:
    data: AbnormalData
    m: int
    transported: list[np.ndarray]  # tangent coordinates of ad^i X2 carried to y, i = 0..m
    beta: np.ndarray
    alpha: np.ndarray
    couplings: np.ndarray  # <eta, [ad X2, ad^j X2]>, j = 0..m-1 (row 0 is the Legendre quantity)
    consistency: float
    x1: np.ndarray
    x2: np.ndarray
    w: np.ndarray


def _jacobi_data(data: AbnormalData, tol: float = 1e-8) -> _JacobiData:
    key = ("jacobi", tol)
    if key not in data.scratch:
        data.scratch[key] = _build_jacobi_data(data, tol)
    return data.scratch[key]


def _build_jacobi_data(data: AbnormalData, tol: float) -> _JacobiData:
    frame, curve = data.frame, data.curve
    m = _order(frame)
    cfg = frame.config
    ads = ad_fields(frame.X1, frame.X2, m, cfg)
    values = [f.many(curve.points) for f in ads]
    beta, alpha, _, _ = _structural(frame, curve.points, values, tol)
    to_tan = data.tangent_basis_pinv.T
    moved = [curve.transported(v) @ to_tan for v in values]
    ad1 = ads[1]
    couplings = np.array(
        [np.einsum("ki,ki->k", data.eta, bracket_field(ad1, ads[j], cfg).many(curve.points)) for j in range(m)]
    )
    y = curve.end
    x1 = frame.X1(y) @ to_tan
    predicted = beta[:, None] * x1[None] + sum(alpha[i][:, None] * moved[i] for i in range(m))
    consistency = float(np.max(np.abs(moved[m] - predicted)) / max(1.0, float(np.max(np.abs(moved[m])))))
    W = bracket_field(ad1, frame.X2, cfg)
    return _JacobiData(data, m, moved, beta, alpha, couplings, consistency, x1, frame.X2(y) @ to_tan, W(y) @ to_tan)


def _integrate_backward(jd: _JacobiData) -> dict[str, np.ndarray]:
    """Solve the Jacobi system from ``s`` to ``0`` with vector-valued forcing.

    Each unknown is a vector in tangent coordinates at the endpoint; pairing
    it with an admissible direction gives the scalar system for that
    direction. RK4 uses the fine grid: nodes are step ends, midpoints the
    half steps.
    """
    m = jd.m
    beta, alpha, coup = jd.beta, jd.alpha, jd.couplings
    forcing = jd.transported[1]
    K, dim = forcing.shape
    # linear system z' = A z + F; rows of z: f, 0, 1, ..., m-1
    A = np.zeros((K, m + 1, m + 1))
    top = m
    A[:, 0, top] = -beta
    A[:, 1, top] = -alpha[0]
    A[:, 2, top] += -alpha[1]
    for j in range(2, m):
        A[:, 2, 1 + j] += coup[j] / coup[0]
        A[:, 1 + j, top] += -alpha[j]
        A[:, 1 + j, j] += -1.0
    F = np.zeros((K, m + 1, dim))
    F[:, 2] = forcing / coup[0][:, None]

    z = np.zeros((m + 1, dim))
    h = -(jd.data.curve.times[2] - jd.data.curve.times[0])
    for k in range(K - 1, 0, -2):
        k1 = A[k] @ z + F[k]
        k2 = A[k - 1] @ (z + (h / 2) * k1) + F[k - 1]
        k3 = A[k - 1] @ (z + (h / 2) * k2) + F[k - 1]
        k4 = A[k - 2] @ (z + h * k3) + F[k - 2]
        z = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return {"f": z[0], "0": z[1], "rest": z[2:]}


def _oriented_det(vectors: np.ndarray, fixed: np.ndarray) -> float:
    """``det[vectors, fixed]`` divided by the volume spanned by ``fixed``.

    Equals the determinant of the pairings of ``vectors`` with an oriented
    orthonormal basis of the complement of ``fixed``, and varies continuously
    with its inputs.
    """
    full = np.column_stack([vectors.T, fixed.T])
    vol = np.sqrt(abs(np.linalg.det(fixed @ fixed.T)))
    return float(np.linalg.det(full)) / vol


def shooting_determinant(data: AbnormalData, case: str = "a", rank_tol: float = 1e-6) -> ShootingResult:
    """Boundary determinant of the Jacobi system at the horizon of ``data``.

    Zero exactly at conjugate horizons (case ``a``: endpoint map, case ``b``:
    map extended by the energy).
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected 'a' or 'b'")
    jd = _jacobi_data(data)
    z = _integrate_backward(jd)
    lam = data.lambda_s
    if case == "a":
        rows = z["rest"]
        fixed = np.vstack([lam, jd.x1, jd.x2])
    else:
        rows = np.vstack([z["f"][None], z["rest"]])
        fixed = np.vstack([lam, jd.x2])
    theta = null_space(fixed)
    boundary = rows @ theta
    sv = np.linalg.svd(boundary, compute_uv=False)
    scale = max(float(np.linalg.norm(rows)), 1e-300)
    deficiency = int(np.sum(sv <= rank_tol * scale))
    return ShootingResult(data.s, case, _oriented_det(rows, fixed), boundary, deficiency, jd.consistency)


def engel_indicator(data: AbnormalData, which: str = "F") -> float:
    """Closed-form conjugacy indicator on four-dimensional manifolds.

    ``F``: ``X1 ^ X2 ^ g_0 ^ W``; ``Ext``: ``X2 ^ g_0 ^ G ^ W`` with
    ``G = int_0^s beta_t exp(-int_0^t alpha^1) g_t dt`` and
    ``W = [[X1, X2], X2]``, all at the endpoint.
    """
    frame = data.frame
    if frame.intrinsic_dim != 4:
        raise DimensionError(f"the closed-form indicator needs dimension 4, not {frame.intrinsic_dim}")
    jd = _jacobi_data(data)
    g = jd.transported[0]
    if which == "F":
        cols = [jd.x1, jd.x2, g[0], jd.w]
    elif which == "Ext":
        times = data.curve.times
        damping = np.exp(-cumulative_simpson(jd.alpha[1], x=times, initial=0.0))
        G = simpson((jd.beta * damping)[:, None] * g, x=times, axis=0)
        cols = [jd.x2, g[0], G, jd.w]
    else:
        raise ValueError(f"unknown indicator {which!r}; expected 'F' or 'Ext'")
    return float(np.linalg.det(np.column_stack(cols)))


@dataclass(frozen=True)
class IndicatorZero:
    s: float
    multiplicity: int = 1
    tangential: bool = False


def locate_zeros(
    f: Callable[[float], float],
    interval: tuple[float, float],
    scan_step: float,
    tol: float = 1e-10,
    multiplicity: Callable[[float], int] | None = None,
    tangential_threshold: float = 1e-6,
    samples: np.ndarray | None = None,
) -> list[IndicatorZero]:
    """Zeros of a scalar function on ``(a, b]``.

    Samples at ``a + k * scan_step``, one step past ``b`` so that a zero at
    ``b`` itself is bracketed, then refines each sign change with Brent's
    method. Local minima of ``|f|`` below ``tangential_threshold`` times the
    sampled maximum without a sign change are refined and flagged tangential.
    ``samples`` may carry precomputed values on that grid.
    """
    a, b = map(float, interval)
    if b <= a:
        return []
    grid = scan_grid(interval, scan_step)
    vals = np.array([f(s) for s in grid]) if samples is None else np.asarray(samples, dtype=float)
    if vals.shape != grid.shape:
        raise ValueError("samples do not match the scan grid")
    top = float(np.max(np.abs(vals))) if len(vals) else 0.0
    if len(vals) > 2 and top == 0.0:
        raise ValueError("the function vanishes at every sample, so its zeros are not isolated")
    zeros: list[IndicatorZero] = []
    limit = b + max(10 * tol, 1e-12 * abs(b))
    for i in range(len(grid)):
        s, v = grid[i], vals[i]
        if v == 0.0:
            root = s
        elif i + 1 < len(grid) and v * vals[i + 1] < 0:
            root = brentq(f, s, grid[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps)
        elif 0 < i < len(grid) - 1 and abs(v) <= min(abs(vals[i - 1]), abs(vals[i + 1])) and abs(v) < tangential_threshold * top:
            res = minimize_scalar(lambda x: abs(f(x)), bounds=(grid[i - 1], grid[i + 1]), method="bounded", options={"xatol": tol})
            if a < res.x <= limit:
                zeros.append(IndicatorZero(float(res.x), 2, True))
            continue
        else:
            continue
        if a < root <= limit:
            mult = multiplicity(root) if multiplicity else 1
            zeros.append(IndicatorZero(float(root), max(1, mult)))
    return zeros


def scan_grid(interval: tuple[float, float], scan_step: float) -> np.ndarray:
    """``a + k * scan_step`` for ``k >= 1``, up to one step past ``b``."""
    a, b = map(float, interval)
    if not scan_step > 0:
        raise ValueError("scan_step must be positive")
    n = int(np.ceil((b - a) / scan_step - 1e-9))
    return a + scan_step * np.arange(1, n + 2)


INDICATORS = ("jacobi-F", "jacobi-Ext", "engel-F", "engel-Ext")


def indicator(data: AbnormalData, name: str) -> float:
    method, variant = name.split("-")
    if method == "jacobi":
        return shooting_determinant(data, "a" if variant == "F" else "b").determinant
    if method == "engel":
        return engel_indicator(data, variant)
    raise ValueError(f"unknown indicator {name!r}")


class IndicatorFunctions:
    """Conjugacy indicators as functions of the horizon, for one frame and grid."""

    def __init__(self, frame: ManifoldFrame, N: int, config: IntegratorConfig = DEFAULT_INTEGRATOR):
        self.frame = frame
        self.N = N
        self.config = config
        self._cache: dict[float, AbnormalData] = {}

    def data(self, s: float) -> AbnormalData:
        s = float(s)
        if s not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[s] = abnormal_covector(self.frame, s, self.N, self.config)
        return self._cache[s]

    def function(self, name: str) -> Callable[[float], float]:
        return lambda s: indicator(self.data(s), name)

    def deficiency(self, variant: str) -> Callable[[float], int]:
        case = "a" if variant == "F" else "b"
        return lambda s: shooting_determinant(self.data(s), case).rank_deficiency

    def sample(self, grid: Sequence[float], names: Sequence[str]) -> dict[str, np.ndarray]:
        """All requested indicators on ``grid``, computing the curve data once per horizon."""
        out = {name: np.empty(len(grid)) for name in names}
        for i, s in enumerate(grid):
            data = abnormal_covector(self.frame, float(s), self.N, self.config)
            for name in names:
                out[name][i] = indicator(data, name)
        return out


def check_method(frame: ManifoldFrame, name: str) -> None:
    """Raise :class:`DimensionError` when indicator ``name`` does not apply to ``frame``."""
    if name.startswith("engel") and frame.intrinsic_dim != 4:
        raise DimensionError(f"the closed-form indicator needs dimension 4, not {frame.intrinsic_dim}")
    if name.startswith("jacobi"):
        _order(frame)


def conjugate_times(
    frame: ManifoldFrame,
    interval: tuple[float, float],
    method: str = "jacobi",
    variant: str = "F",
    N: int = 400,
    scan_step: float = 0.02,
    tol: float = 1e-10,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
) -> list[IndicatorZero]:
    """Conjugate horizons in ``(a, b]`` from the shooting determinant or the closed form."""
    return conjugate_time_table(frame, interval, [f"{method}-{variant}"], N, scan_step, tol, config)[f"{method}-{variant}"]


def conjugate_time_table(
    frame: ManifoldFrame,
    interval: tuple[float, float],
    names: Sequence[str] = INDICATORS,
    N: int = 400,
    scan_step: float = 0.02,
    tol: float = 1e-10,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
) -> dict[str, list[IndicatorZero]]:
    """Zeros of several indicators from one shared scan."""
    for name in names:
        if name not in INDICATORS:
            raise ValueError(f"unknown indicator {name!r}; expected one of {INDICATORS}")
        check_method(frame, name)
    a, b = map(float, interval)
    if b <= a:
        return {name: [] for name in names}
    fns = IndicatorFunctions(frame, N, config)
    grid = scan_grid(interval, scan_step)
    samples = fns.sample(grid, names)
    return {
        name: locate_zeros(
            fns.function(name), interval, scan_step, tol, fns.deficiency(name.split("-")[1]), samples=samples[name]
        )
        for name in names
    }
