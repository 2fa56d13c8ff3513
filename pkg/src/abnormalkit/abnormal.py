"""Singularity of the X1 trajectory: the endpoint differential, the abnormal
covector and the checks the conjugate-point theory relies on.

Time grid: ``[0, s]`` is cut into ``N`` cells of width ``h = s / N``. Cell
midpoints ``(j + 1/2) h`` carry the control unknowns; curve data is sampled on
the fine grid ``k h / 2`` (nodes and midpoints) so that Simpson and RK4 rules
are available downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .flow import DEFAULT_INTEGRATOR, IntegratorConfig, flow_curve
from .vfcore import ManifoldFrame, bracket_field


class HypothesisError(ValueError):
    """The curve does not satisfy a standing assumption."""

    check = "hypothesis"


class NotSingularError(HypothesisError):
    check = "corank"


class CorankError(HypothesisError):
    check = "corank"


class GridTooCoarseWarning(UserWarning):
    pass


DEFAULT_RANK_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class CurveSample:
    """The X1 trajectory on the fine grid with its linearized flow."""

    frame: ManifoldFrame
    s: float
    N: int
    times: np.ndarray
    points: np.ndarray
    jacobians: np.ndarray  # DPhi_t(x0) at each fine time
    transports: np.ndarray  # DPhi_{s - t}(gamma(t)) at each fine time

    @property
    def h(self) -> float:
        return self.s / self.N

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def mid(self) -> slice:
        return slice(1, None, 2)

    def transported(self, values: np.ndarray, where=slice(None)) -> np.ndarray:
        """Carry vectors sampled along the curve (rows, at fine indices ``where``) to the endpoint."""
        return np.einsum("kij,kj->ki", self.transports[where], values)

    def tangent(self, vectors: np.ndarray) -> np.ndarray:
        """Tangent coordinates at the endpoint."""
        return self.frame.to_tangent(self.end, vectors)


def sample_curve(frame: ManifoldFrame, s: float, N: int, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> CurveSample:
    if not s > 0:
        raise ValueError("horizon s must be positive")
    if N < 1:
        raise ValueError("grid size N must be positive")
    times = np.linspace(0.0, s, 2 * N + 1)
    traj = flow_curve(frame, times, config)
    J = traj.jacobians
    transports = np.linalg.solve(J.transpose(0, 2, 1), J[-1].T[None]).transpose(0, 2, 1)
    return CurveSample(frame, float(s), int(N), times, traj.points, J, transports)


@dataclass(frozen=True, eq=False)
class DifferentialMatrix:
    """Tangent-coordinate matrix with columns ``X1(y)`` and ``g_t(y)`` at midpoints."""

    matrix: np.ndarray
    singular_values: np.ndarray
    rank: int
    left_vectors: np.ndarray

    @property
    def corank(self) -> int:
        return self.matrix.shape[0] - self.rank


def _numerical_rank(sv: np.ndarray, tol: float) -> int:
    if len(sv) == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def differential_matrix(
    frame: ManifoldFrame,
    s: float,
    N: int,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    rank_tol: float = DEFAULT_RANK_TOL,
    curve: CurveSample | None = None,
) -> DifferentialMatrix:
    if N < frame.intrinsic_dim:
        warnings.warn(f"grid N={N} is below the manifold dimension; rank is capped", GridTooCoarseWarning, stacklevel=2)
    curve = curve or sample_curve(frame, s, N, config)
    mids = curve.points[curve.mid]
    g = curve.transported(frame.X2.many(mids), curve.mid)
    cols = np.vstack([frame.X1(curve.end)[None], g])
    D = curve.tangent(cols).T
    u, sv, _ = np.linalg.svd(D, full_matrices=D.shape[1] < D.shape[0])
    return DifferentialMatrix(D, sv, _numerical_rank(sv, rank_tol), u)


@dataclass(frozen=True, eq=False)
class AbnormalData:
    """Abnormal covector of the X1 trajectory and everything derived from it."""

    frame: ManifoldFrame
    curve: CurveSample
    lambda_s: np.ndarray  # tangent coordinates at the endpoint, unit norm
    lambda_ambient: np.ndarray
    corank: int
    eta: np.ndarray  # ambient covector along the curve, fine grid
    legendre: np.ndarray  # <eta, [[X1, X2], X2]> on the fine grid
    differential: DifferentialMatrix
    diagnostics: dict = field(default_factory=dict)
    scratch: dict = field(default_factory=dict)  # memo for derived quantities

    @property
    def s(self) -> float:
        return self.curve.s

    @property
    def N(self) -> int:
        return self.curve.N

    @cached_property
    def tangent_basis_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.frame.tangent_frame(self.curve.end))


def abnormal_covector(
    frame: ManifoldFrame,
    s: float,
    N: int,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> AbnormalData:
    """Unit covector annihilating the image of the endpoint differential.

    Raises :class:`NotSingularError` when the differential is onto and
    :class:`CorankError` when the cokernel has dimension two or more. The sign
    is fixed so that the Legendre quantity is positive at ``t = 0``.
    """
    curve = sample_curve(frame, s, N, config)
    D = differential_matrix(frame, s, N, config, rank_tol, curve)
    if D.corank == 0:
        raise NotSingularError(f"endpoint differential is onto at s={s} (smallest singular value {D.singular_values[-1]:.3e})")
    if D.corank > 1:
        raise CorankError(f"cokernel has dimension {D.corank} at s={s}; only corank one is supported")
    lam = D.left_vectors[:, -1]
    y = curve.end
    lam_amb = frame.covector_to_ambient(y, lam)
    eta = np.einsum("i,kij->kj", lam_amb, curve.transports)
    Y = bracket_field(frame.X1, frame.X2, frame.config)
    W = bracket_field(Y, frame.X2, frame.config)
    legendre = np.einsum("ki,ki->k", eta, W.many(curve.points))
    if legendre[0] < 0:
        lam, lam_amb, eta, legendre = -lam, -lam_amb, -eta, -legendre
    goh = np.abs(np.einsum("ki,ki->k", eta, Y.many(curve.points)))
    ann = np.abs(np.einsum("ki,ki->k", eta, frame.X2.many(curve.points)))
    diagnostics = {
        "corank": D.corank,
        "rank": D.rank,
        "smallest_singular_value": float(D.singular_values[-1]),
        "goh_residual": float(goh.max()),
        "annihilation_residual": float(max(ann.max(), abs(lam_amb @ frame.X1(y)))),
        "legendre_min": float(legendre.min()),
        "legendre_max": float(legendre.max()),
    }
    data = AbnormalData(frame, curve, lam, lam_amb, D.corank, eta, legendre, D, diagnostics)
    diagnostics["strictness_residual"] = strictness_residual(data, rank_tol)
    diagnostics["j_projection_norm"] = j_projection_norm(data, rank_tol)
    return data


def _control_columns(data: AbnormalData) -> np.ndarray:
    """Image of each control cell (v1 cells, then v2 cells) in tangent coordinates."""
    D = data.differential.matrix
    h = data.curve.h
    N = data.N
    return np.hstack([np.repeat(D[:, :1] * h, N, axis=1), D[:, 1:] * h])


def strictness_residual(data: AbnormalData, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Norm of the energy direction inside the cokernel of the extended differential.

    Zero when every covector annihilating ``(dF, dJ)`` has vanishing energy
    component, i.e. the curve admits no normal lift.
    """
    N = data.N
    cols = _control_columns(data)
    energy = np.concatenate([np.full(N, data.curve.h), np.zeros(N)])
    E = np.vstack([cols, energy[None]])
    u, sv, _ = np.linalg.svd(E, full_matrices=E.shape[1] < E.shape[0])
    r = _numerical_rank(sv, rank_tol)
    left_null = u[:, r:]
    e = np.zeros(E.shape[0])
    e[-1] = 1.0
    return float(np.linalg.norm(left_null.T @ e))


def j_projection_norm(data: AbnormalData, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Norm of the energy gradient ``(1, 0)`` projected onto ``ker dF``.

    Controls carry the normalized inner product ``(1/s) int u.w dt`` so that
    the unprojected gradient has norm one.
    """
    N = data.N
    cols = _control_columns(data)
    grad = np.concatenate([np.ones(N), np.zeros(N)])
    coef = np.linalg.lstsq(cols, cols @ grad, rcond=rank_tol)[0]
    proj = grad - coef
    return float(np.sqrt(proj @ proj / N))


def check_hypotheses(
    data: AbnormalData,
    goh_tol: float = 1e-8,
    strict_tol: float = 1e-6,
    need_strict: bool = True,
    j_tol: float = 1e-8,
) -> list[str]:
    """Names of violated standing hypotheses (corank is enforced on construction).

    ``need_strict`` adds the two checks on the map extended by the energy.
    """
    d = data.diagnostics
    failed = []
    if d["goh_residual"] > goh_tol:
        failed.append("goh")
    if d["legendre_min"] <= 0.0:
        failed.append("legendre")
    if need_strict and d["strictness_residual"] > strict_tol:
        failed.append("strictness")
    if need_strict and d["j_projection_norm"] <= j_tol:
        failed.append("j_projection")
    return failed
