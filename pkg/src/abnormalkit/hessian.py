"""Second variation of the endpoint map along the abnormal X1 trajectory.

Discretization: the X2 control ``w`` is piecewise constant on the cells of
``[0, s]`` and the completion coordinate ``c`` is a scalar. On the cell
midpoints ``t_j`` the quadratic form is

    Q(c, w) = sum_j h l_j w_j^2 + c sum_j h b_j w_j
              + sum_{k < j} h^2 B(t_k, t_j) w_k w_j

with ``l = <lambda, [gdot_t, g_t]>``, ``b = <lambda, [X2, gdot_t]>`` and
``B(tau, t) = <lambda, [gdot_tau, gdot_t]>``. Here ``g_t`` is X2 carried from
``gamma(t)`` to the endpoint by the X1 flow and ``gdot_t`` its time
derivative, which is ``[X1, X2]`` carried the same way.

Two kernels are used: on ``K_F`` the first-order variation
``V = sum h w_j gdot_j - c X2(y)`` may be a multiple of ``X1(y)``; on the
extended kernel it must vanish.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import null_space
from scipy.optimize import brentq

from .abnormal import AbnormalData, HypothesisError, abnormal_covector
from .flow import DEFAULT_INTEGRATOR, IntegratorConfig
from .vfcore import AffineField, ManifoldFrame, bracket_field
from .vfcore.dual import jvp

VARIANTS = ("F", "Ext")


class ConstraintRankWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class BracketKernels:
    """Coefficient functions of the second variation on the cell midpoints."""

    s: float
    N: int
    times: np.ndarray
    legendre: np.ndarray
    goh: np.ndarray
    kernel: np.ndarray  # kernel[k, j] = B(t_k, t_j)
    gdot: np.ndarray  # tangent coordinates of gdot_{t_j}(y), one row per midpoint
    x1: np.ndarray
    x2: np.ndarray
    lambda_s: np.ndarray

    @property
    def h(self) -> float:
        return self.s / self.N


def _second_derivative_term(data: AbnormalData) -> np.ndarray | None:
    """Hessian at ``gamma(t)`` of ``x -> <lambda, Phi_{s-t}(x)>`` on the fine grid.

    Vanishes for affine X1. Otherwise it is the integral from ``t`` to ``s``
    of the second derivative of ``<eta, X1>`` pulled back by the flow.
    """
    frame, curve = data.frame, data.curve
    X1 = frame.X1
    if isinstance(X1, AffineField):
        return None
    n = frame.ambient_dim
    cfg = frame.config
    X = curve.points.T
    K = X.shape[1]
    H = np.empty((K, n, n))
    for i in range(n):
        ei = np.zeros((n, K))
        ei[i] = 1.0
        for j in range(i, n):
            ej = np.zeros((n, K))
            ej[j] = 1.0
            if cfg.mode == "dual" and X1.dual_safe:
                d2 = jvp(lambda z: X1.jvp(z, ej, cfg), X, ei)[1]
            else:
                step = cfg.fd_step * np.maximum(1.0, np.linalg.norm(X, axis=0))
                d2 = (X1.jvp(X + step * ei, ej, cfg) - X1.jvp(X - step * ei, ej, cfg)) / (2 * step)
            H[:, i, j] = H[:, j, i] = np.einsum("ik,ki->k", np.asarray(d2), data.eta)
    J = curve.jacobians
    integrand = np.einsum("kai,kab,kbj->kij", J, H, J)
    dx = curve.times[1] - curve.times[0]
    tail = cumulative_simpson(integrand[::-1], dx=dx, axis=0, initial=0.0)[::-1]
    Jinv = np.linalg.inv(J)
    return np.einsum("kai,kab,kbj->kij", Jinv, tail, Jinv)


def bracket_kernels(data: AbnormalData) -> BracketKernels:
    """Evaluate ``l``, ``b`` and ``B`` on the midpoints.

    Brackets of transported fields at the endpoint are computed from first
    derivatives along the curve: if ``G = (Phi_r)_* Z`` then
    ``<lambda, DG(y) v> = p . v`` with ``p`` obtained from ``DZ`` at
    ``gamma(t)`` and the second-derivative term of the flow.
    """
    frame, curve = data.frame, data.curve
    cfg = frame.config
    mid = curve.mid
    pts = curve.points[mid]
    eta = data.eta[mid]
    T = curve.transports[mid]
    Y = bracket_field(frame.X1, frame.X2, cfg)
    y = curve.end
    lam = data.lambda_ambient

    a = np.einsum("kij,kj->ki", T, Y.many(pts))
    if isinstance(Y, AffineField):
        rows = eta @ Y.matrix
    else:
        rows = np.einsum("ki,kij->kj", eta, Y.jacobian_many(pts, cfg))
    S = _second_derivative_term(data)
    if S is not None:
        rows = rows + np.einsum("ki,kij->kj", Y.many(pts), S[mid])
    # p_j T_j = rows_j
    p = np.linalg.solve(T.transpose(0, 2, 1), rows[:, :, None])[:, :, 0]

    kernel = a @ p.T - p @ a.T  # [k, j] = p_j . a_k - p_k . a_j
    x2 = frame.X2(y)
    goh = p @ x2 - (lam @ frame.X2.jacobian(y, cfg)) @ a.T
    to_tan = data.tangent_basis_pinv.T
    return BracketKernels(
        s=curve.s,
        N=curve.N,
        times=curve.times[mid],
        legendre=data.legendre[mid],
        goh=goh,
        kernel=kernel,
        gdot=a @ to_tan,
        x1=frame.X1(y) @ to_tan,
        x2=x2 @ to_tan,
        lambda_s=data.lambda_s,
    )


@dataclass(frozen=True, eq=False)
class SecondVariation:
    """Discrete form on ``(c, w_0 .. w_{N-1})`` with its linear constraints."""

    variant: str
    s: float
    N: int
    matrix: np.ndarray
    constraints: np.ndarray
    constraint_rank: int

    def restricted(self) -> np.ndarray:
        """The form in an orthonormal basis of the constraint kernel.

        Householder reflections map the constraint row space onto the first
        coordinates; the trailing block is the restriction.
        """
        _, sv, vt = np.linalg.svd(self.constraints, full_matrices=False)
        rows = vt[: self.constraint_rank]
        M = self.matrix.copy()
        B = rows.T.copy()
        for i in range(len(rows)):
            x = B[i:, i]
            v = x.copy()
            v[0] += np.copysign(np.linalg.norm(x), x[0])
            v /= np.linalg.norm(v)
            B[i:, i:] -= 2.0 * np.outer(v, v @ B[i:, i:])
            M[i:, :] -= 2.0 * np.outer(v, v @ M[i:, :])
            M[:, i:] -= 2.0 * np.outer(M[:, i:] @ v, v)
        k = len(rows)
        return M[k:, k:]

    def kernel_basis(self) -> np.ndarray:
        return null_space(self.constraints, rcond=1e-10)


def constraint_directions(kernels: BracketKernels, variant: str) -> np.ndarray:
    """Orthonormal covectors (columns) whose pairing with ``V`` must vanish."""
    if variant == "F":
        fixed = np.column_stack([kernels.x1, kernels.lambda_s])
    elif variant == "Ext":
        fixed = kernels.lambda_s[:, None]
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return null_space(fixed.T)


def assemble_form(kernels: BracketKernels, variant: str) -> SecondVariation:
    N, h = kernels.N, kernels.h
    Q = np.zeros((N + 1, N + 1))
    Q[0, 1:] = Q[1:, 0] = h * kernels.goh / 2
    upper = np.triu(h * h * kernels.kernel, 1)
    Q[1:, 1:] = np.diag(h * kernels.legendre) + (upper + upper.T) / 2
    theta = constraint_directions(kernels, variant)
    A = np.column_stack([-(theta.T @ kernels.x2), h * (theta.T @ kernels.gdot.T)])
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * max(sv[0], 1e-300)))
    if rank < A.shape[0]:
        warnings.warn(f"constraint matrix for {variant} has rank {rank} < {A.shape[0]}", ConstraintRankWarning, stacklevel=2)
    return SecondVariation(variant, kernels.s, N, Q, A, rank)


@dataclass(frozen=True, eq=False)
class Inertia:
    negative: int
    null: int
    positive: int
    eigenvalues: np.ndarray
    threshold: float

    @property
    def min_abs(self) -> float:
        return float(np.min(np.abs(self.eigenvalues)))

    def __iter__(self):
        return iter((self.negative, self.null, self.positive))


def inertia(form: SecondVariation, tol: float = 1e-6) -> Inertia:
    """Counts of negative, (numerically) zero and positive eigenvalues on the kernel.

    An eigenvalue counts as zero when its modulus is at most ``tol`` times the
    largest modulus.
    """
    eig = np.linalg.eigvalsh(form.restricted())
    thr = tol * float(np.max(np.abs(eig))) if len(eig) else 0.0
    zero = np.abs(eig) <= thr
    return Inertia(int(np.sum((eig < 0) & ~zero)), int(np.sum(zero)), int(np.sum((eig > 0) & ~zero)), eig, thr)


def forms_at(frame: ManifoldFrame, s: float, N: int, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> dict[str, SecondVariation]:
    data = abnormal_covector(frame, s, N, config)
    k = bracket_kernels(data)
    return {v: assemble_form(k, v) for v in VARIANTS}


@dataclass(frozen=True)
class ProfileRow:
    s: float
    indF: int
    nullF: int
    indExt: int
    nullExt: int
    min_abs_eig: float
    error: str | None = None

    @property
    def pair(self) -> tuple[int, int]:
        return self.indF, self.indExt


def index_profile(
    frame: ManifoldFrame,
    s_values: Iterable[float],
    N: int,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    tol: float = 1e-6,
) -> list[ProfileRow]:
    """Inertia of both forms at each horizon; rows that fail a hypothesis carry the error."""
    rows = []
    for s in s_values:
        try:
            forms = forms_at(frame, float(s), N, config)
        except HypothesisError as exc:
            rows.append(ProfileRow(float(s), -1, -1, -1, -1, float("nan"), str(exc)))
            continue
        fi, ei = inertia(forms["F"], tol), inertia(forms["Ext"], tol)
        rows.append(ProfileRow(float(s), fi.negative, fi.null, ei.negative, ei.null, min(fi.min_abs, ei.min_abs)))
    return rows


@dataclass(frozen=True)
class HessianZero:
    s: float
    variant: str
    multiplicity: int = 1
    raw: tuple[float, ...] = ()


class _SpectrumCache:
    def __init__(self, frame, config):
        self.frame = frame
        self.config = config
        self.kernels: dict[tuple[float, int], BracketKernels] = {}
        self.spectra: dict[tuple[float, int, str], np.ndarray] = {}

    def __call__(self, s: float, N: int, variant: str) -> np.ndarray:
        key = (float(s), N, variant)
        if key not in self.spectra:
            kk = (float(s), N)
            if kk not in self.kernels:
                self.kernels[kk] = bracket_kernels(abnormal_covector(self.frame, s, N, self.config))
            form = assemble_form(self.kernels[kk], variant)
            self.spectra[key] = np.linalg.eigvalsh(form.restricted())
        return self.spectra[key]

    def count(self, s, N, variant) -> int:
        return int(np.sum(self(s, N, variant) < 0))


def _eigen_root(spectra: _SpectrumCache, N: int, variant: str, index: int, lo: float, hi: float, xtol: float) -> float:
    # sorted eigenvalues are continuous in s, so the one at ``index`` changes sign in [lo, hi]
    f = lambda s: spectra(s, N, variant)[index]
    return brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def _bracket_near(spectra, N, variant, index, guess, scale, floor):
    d = scale
    for _ in range(40):
        lo, hi = max(guess - d, floor), guess + d
        if spectra(lo, N, variant)[index] >= 0 > spectra(hi, N, variant)[index]:
            return lo, hi
        d *= 2
    raise RuntimeError(f"could not bracket the sign change of eigenvalue {index} near s={guess}")


def hessian_zeros(
    frame: ManifoldFrame,
    interval: tuple[float, float],
    N: int = 400,
    variant: str = "F",
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    scan_step: float = 0.25,
    tol: float = 1e-9,
    richardson: bool = True,
) -> list[HessianZero]:
    """Horizons in ``(a, b]`` where an eigenvalue of the restricted form changes sign.

    Sign changes are bracketed by jumps of the negative count, which grows
    with ``s``. The discrete crossing is second order accurate in ``h``; with
    ``richardson`` it is recomputed on ``2N`` and extrapolated.
    """
    a, b = map(float, interval)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if b <= a:
        return []
    spectra = _SpectrumCache(frame, config)
    # the discrete crossing lags the true one, so scan one step past b
    n_steps = int(np.ceil((b - a) / scan_step - 1e-9))
    # the form is positive definite on short arcs (Legendre > 0); very short
    # arcs are skipped because their differential is numerically rank deficient
    start = a if a > 0 else 0.05 * scan_step
    grid = np.concatenate([[start], a + scan_step * np.arange(1, n_steps + 2)])
    counts = [spectra.count(s, N, variant) for s in grid]
    found: list[HessianZero] = []
    for (lo, c_lo), (hi, c_hi) in zip(zip(grid, counts), zip(grid[1:], counts[1:])):
        for index in range(c_lo, c_hi):
            z = _eigen_root(spectra, N, variant, index, lo, hi, tol)
            raw: tuple[float, ...] = (z,)
            if richardson:
                lo2, hi2 = _bracket_near(spectra, 2 * N, variant, index, z, 1e-3 * max(1.0, z / N * 100), lo)
                z2 = _eigen_root(spectra, 2 * N, variant, index, lo2, hi2, tol)
                raw = (z, z2)
                z = (4 * z2 - z) / 3
            if a < z <= b + 1e-9 * max(1.0, b):
                found.append(HessianZero(z, variant, 1, raw))
    return _merge(found, 1e-6)


def _merge(zeros: Sequence[HessianZero], tol: float) -> list[HessianZero]:
    out: list[HessianZero] = []
    for z in sorted(zeros, key=lambda z: z.s):
        if out and abs(z.s - out[-1].s) <= tol:
            last = out[-1]
            out[-1] = HessianZero(last.s, last.variant, last.multiplicity + 1, last.raw + z.raw)
        else:
            out.append(z)
    return out
