"""Flows of X1, their linearizations, endpoint maps of controls, and the
time reparametrization that turns the X1 coefficient into a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .vfcore import AffineField, Field, ManifoldFrame


@dataclass(frozen=True)
class IntegratorConfig:
    """``rk4`` takes fixed steps of at most ``horizon / steps``; ``rk45`` is adaptive."""

    method: str = "rk4"
    steps: int = 2000
    rtol: float = 1e-9
    atol: float = 1e-10

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be positive")

    def max_step(self, horizon: float) -> float:
        return max(abs(horizon), 1e-12) / self.steps


DEFAULT_INTEGRATOR = IntegratorConfig()


def _rk4_step(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + (dt / 2) * k1)
    k3 = rhs(t + dt / 2, y + (dt / 2) * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _substeps(span: float, max_step: float) -> int:
    return max(1, math.ceil(abs(span) / max_step - 1e-9))


def integrate(rhs, y0, times, config: IntegratorConfig = DEFAULT_INTEGRATOR, horizon: float | None = None):
    """Solve ``y' = rhs(t, y)`` with ``y(times[0]) = y0`` and return ``y`` at every time.

    ``times`` must be monotone (either direction). Fixed-step RK4 lands exactly
    on every requested time.
    """
    times = np.asarray(times, dtype=float)
    if horizon is None:
        horizon = float(abs(times[-1] - times[0]))
    y0 = np.asarray(y0, dtype=float)
    if len(times) == 1:
        return y0[None].copy()
    if config.method == "rk45":
        shape = y0.shape
        sol = solve_ivp(
            lambda t, y: np.ravel(rhs(t, y.reshape(shape))),
            (times[0], times[-1]),
            y0.ravel(),
            method="RK45",
            t_eval=times,
            rtol=config.rtol,
            atol=config.atol,
        )
        if not sol.success:
            raise RuntimeError(f"integration failed: {sol.message}")
        return sol.y.T.reshape((len(times),) + shape)
    h = config.max_step(horizon)
    out = np.empty((len(times),) + y0.shape)
    out[0] = y = y0
    for i in range(1, len(times)):
        t0, t1 = times[i - 1], times[i]
        k = _substeps(t1 - t0, h)
        dt = (t1 - t0) / k
        for j in range(k):
            y = _rk4_step(rhs, t0 + j * dt, y, dt)
        out[i] = y
    return out


@dataclass(frozen=True)
class Trajectory:
    """Samples of ``gamma(t) = exp(t X1)(x0)`` and of ``DPhi_t(x0)``."""

    times: np.ndarray
    points: np.ndarray
    jacobians: np.ndarray | None = None


def _variational_rhs(X1: Field, config):
    n = X1.dim
    if isinstance(X1, AffineField):
        M, c = X1.matrix, X1.offset

        def rhs(t, y):
            # y = [x | J] as an n x (n+1) block, linear in y
            out = M @ y
            out[:, 0] += c
            return out

        return rhs, lambda x, J: np.column_stack([x, J]), lambda y: (y[:, 0], y[:, 1:])

    def rhs(t, y):
        x = y[:, 0]
        out = np.empty_like(y)
        out[:, 0] = X1(x)
        if X1.batch_safe:
            out[:, 1:] = X1.jvp(np.repeat(x[:, None], n, axis=1), y[:, 1:], config)
        else:
            out[:, 1:] = X1.jacobian(x, config) @ y[:, 1:]
        return out

    return rhs, lambda x, J: np.column_stack([x, J]), lambda y: (y[:, 0], y[:, 1:])


def _affine_rk4(X1: AffineField, x0, grid, max_step, jacobians):
    """RK4 on ``x' = M x + c`` (and ``J' = M J``) as products with the RK4 propagator."""
    n = X1.dim
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = X1.matrix
    aug[:n, n] = X1.offset
    # columns: the point (homogeneous) then, optionally, the Jacobian
    state = np.zeros((n + 1, 1 + (n if jacobians else 0)))
    state[:n, 0] = x0
    state[n, 0] = 1.0
    if jacobians:
        state[:n, 1:] = np.eye(n)
    cache = {}
    out = np.empty((len(grid), n, state.shape[1]))
    out[0] = state[:n]
    for i in range(1, len(grid)):
        span = grid[i] - grid[i - 1]
        k = _substeps(span, max_step)
        key = (span, k)
        P = cache.get(key)
        if P is None:
            A = (span / k) * aug
            step = np.eye(n + 1) + A @ (np.eye(n + 1) + A @ (np.eye(n + 1) + A @ (np.eye(n + 1) + A / 4) / 3) / 2)
            P = cache[key] = np.linalg.matrix_power(step, k)
        state = P @ state
        out[i] = state[:n]
    return out if jacobians else out[:, :, 0]


def flow_curve(
    frame: ManifoldFrame,
    times,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    jacobians: bool = True,
    start=None,
) -> Trajectory:
    """Integrate the X1 flow from the base point (or ``start``) through ``times`` (starting at 0)."""
    times = np.asarray(times, dtype=float)
    x0 = frame.base_point if start is None else np.asarray(start, dtype=float)
    prepend = times[0] != 0.0
    grid = np.concatenate([[0.0], times]) if prepend else times
    horizon = float(np.max(np.abs(grid)))
    if isinstance(frame.X1, AffineField) and config.method == "rk4":
        ys = _affine_rk4(frame.X1, x0, grid, config.max_step(horizon), jacobians)
        if prepend:
            ys = ys[1:]
        if jacobians:
            return Trajectory(times, ys[:, :, 0].copy(), ys[:, :, 1:].copy())
        return Trajectory(times, ys)
    if jacobians:
        rhs, pack, unpack = _variational_rhs(frame.X1, frame.config)
        ys = integrate(rhs, pack(x0, np.eye(frame.ambient_dim)), grid, config, horizon)
        if prepend:
            ys = ys[1:]
        return Trajectory(times, ys[:, :, 0].copy(), ys[:, :, 1:].copy())
    ys = integrate(lambda t, x: frame.X1(x), x0, grid, config, horizon)
    return Trajectory(times, ys[1:] if prepend else ys)


def point_at(frame: ManifoldFrame, t: float, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    return flow_curve(frame, [0.0, t], config, jacobians=False).points[-1]


def flow_jacobian(frame: ManifoldFrame, t0: float, t1: float, config: IntegratorConfig = DEFAULT_INTEGRATOR):
    """``(gamma(t1), DPhi_{t1-t0}(gamma(t0)))``."""
    start = point_at(frame, t0, config)
    traj = flow_curve(frame, [0.0, t1 - t0], config, start=start)
    return traj.points[-1], traj.jacobians[-1]


def transport(frame, t0, t1, vector, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Push a vector at ``gamma(t0)`` to ``gamma(t1)`` with the linearized X1 flow."""
    _, J = flow_jacobian(frame, t0, t1, config)
    return J @ np.asarray(vector, dtype=float)


def cotransport(frame, t0, t1, covector, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Pull a covector at ``gamma(t1)`` back to ``gamma(t0)``: ``xi -> xi . DPhi``."""
    _, J = flow_jacobian(frame, t0, t1, config)
    return np.asarray(covector, dtype=float) @ J


class PushforwardField(Field):
    """``(Phi_shift)_* Z``: evaluate ``Z`` upstream and carry it along the X1 flow.

    Built only from RK4 arithmetic, so it accepts dual inputs and can itself be
    bracketed.
    """

    def __init__(self, frame: ManifoldFrame, base: Field, shift: float, steps: int):
        self.frame = frame
        self.base = base
        self.shift = float(shift)
        self.dim = base.dim
        self.steps = max(1, int(steps))
        self.dual_safe = base.dual_safe and frame.X1.dual_safe
        self.depth = base.depth

    def __call__(self, x):
        X1, cfg = self.frame.X1, self.frame.config
        dt = self.shift / self.steps
        p = x
        back = lambda t, y: -X1(y)
        for _ in range(self.steps):
            p = _rk4_step(back, 0.0, p, dt)
        w = self.base(p)

        def step(p, w):
            k1p, k1w = X1(p), X1.jvp(p, w, cfg)
            p2, w2 = p + (dt / 2) * k1p, w + (dt / 2) * k1w
            k2p, k2w = X1(p2), X1.jvp(p2, w2, cfg)
            p3, w3 = p + (dt / 2) * k2p, w + (dt / 2) * k2w
            k3p, k3w = X1(p3), X1.jvp(p3, w3, cfg)
            p4, w4 = p + dt * k3p, w + dt * k3w
            k4p, k4w = X1(p4), X1.jvp(p4, w4, cfg)
            return (
                p + (dt / 6) * (k1p + 2 * k2p + 2 * k3p + k4p),
                w + (dt / 6) * (k1w + 2 * k2w + 2 * k3w + k4w),
            )

        for _ in range(self.steps):
            p, w = step(p, w)
        return w


def pushforward_field(frame: ManifoldFrame, base: Field, tau: float, t: float, steps: int = 400) -> PushforwardField:
    """The field carried from ``gamma(tau)`` to ``gamma(t)`` by the X1 flow."""
    return PushforwardField(frame, base, t - tau, steps)


class AdmissibilityError(ValueError):
    """Control outside the region where the reparametrization is invertible."""


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control ``(v1, v2)`` on ``[0, s]`` with arbitrary knots.

    The trajectory solves ``x' = (1 + v1) X1 + v2 X2``; the zero control
    follows the X1 flow.
    """

    knots: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        v1 = np.asarray(self.v1, dtype=float)
        v2 = np.asarray(self.v2, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must increase strictly from 0")
        if v1.shape != (len(knots) - 1,) or v2.shape != v1.shape:
            raise ValueError("one value per cell is required for v1 and v2")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)

    @classmethod
    def uniform(cls, s: float, v1, v2) -> "Control":
        v1 = np.asarray(v1, dtype=float)
        return cls(np.linspace(0.0, s, len(v1) + 1), v1, v2)

    @classmethod
    def zero(cls, s: float, cells: int = 1) -> "Control":
        return cls.uniform(s, np.zeros(cells), np.zeros(cells))

    @property
    def s(self) -> float:
        return float(self.knots[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    def mean_v1(self) -> float:
        return float(self.widths @ self.v1) / self.s

    def cell_of(self, t) -> np.ndarray:
        return np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.v1) - 1)

    def __call__(self, t):
        i = self.cell_of(t)
        return self.v1[i], self.v2[i]

    def resample(self, knots) -> "Control":
        """Cell averages on new knots over the same interval (exact on common refinements)."""
        knots = np.asarray(knots, dtype=float)
        if not np.isclose(knots[-1], self.s, rtol=1e-12, atol=1e-12):
            raise ValueError("resampling must keep the horizon")
        knots = knots.copy()
        knots[-1] = self.s
        merged = np.union1d(self.knots, knots)
        mids = 0.5 * (merged[1:] + merged[:-1])
        w = np.diff(merged)
        a1, a2 = self(mids)
        target = np.clip(np.searchsorted(knots, mids, side="right") - 1, 0, len(knots) - 2)
        width = np.diff(knots)
        v1 = np.bincount(target, w * a1, len(knots) - 1) / width
        v2 = np.bincount(target, w * a2, len(knots) - 1) / width
        return Control(knots, v1, v2)


def endpoint(frame: ManifoldFrame, control: Control, config: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Endpoint of the trajectory driven by ``control`` from the base point."""
    X1, X2 = frame.X1, frame.X2
    x = frame.base_point.copy()
    h = config.max_step(control.s)
    for a, b, u1, u2 in zip(control.knots[:-1], control.knots[1:], control.v1, control.v2):
        rhs = lambda t, y, u1=u1, u2=u2: (1.0 + u1) * X1(y) + u2 * X2(y)
        if config.method == "rk45":
            x = integrate(rhs, x, [a, b], config)[-1]
            continue
        k = _substeps(b - a, h)
        dt = (b - a) / k
        for j in range(k):
            x = _rk4_step(rhs, a + j * dt, x, dt)
    return x


def _phi_knots(knots, rate):
    """Values at ``knots`` of the piecewise-linear map with slope ``rate`` per cell."""
    return np.concatenate([[0.0], np.cumsum(np.diff(knots) * rate)])


def rho(control: Control, alpha: float = 0.5) -> Control:
    """Reparametrize so the X1 coefficient splits into its mean plus a zero-mean part.

    With ``v1 = c + z`` (``c`` the mean) and ``phi(t) = int_0^t (1 + z)``, the
    image is ``(c + (1 + c) z, phi' * v2(phi))``. The endpoint is unchanged.
    """
    c = control.mean_v1()
    z = control.v1 - c
    if np.any(1.0 + z <= alpha):
        raise AdmissibilityError(f"1 + zero-mean part of v1 must exceed {alpha}")
    knots = control.knots
    phi = _phi_knots(knots, 1.0 + z)
    phi[-1] = control.s
    # new time sigma: v1 part changes at knots, v2(phi(sigma)) at phi^{-1}(knots)
    pulled = np.interp(knots, phi, knots)
    merged = np.union1d(knots, pulled)
    merged = merged[np.concatenate([[True], np.diff(merged) > 1e-14 * control.s])]
    merged[-1] = control.s
    mids = 0.5 * (merged[1:] + merged[:-1])
    zi = z[control.cell_of(mids)]
    _, v2 = control(np.interp(mids, knots, phi))
    return Control(merged, c + (1.0 + c) * zi, (1.0 + zi) * v2)


def rho_inverse(control: Control, alpha: float = 0.5) -> Control:
    """Inverse of :func:`rho`."""
    c = control.mean_v1()
    z = control.v1 - c
    if 1.0 + c <= 0.0:
        raise AdmissibilityError("mean of v1 must exceed -1")
    rate = 1.0 + z / (1.0 + c)
    if np.any(rate <= alpha):
        raise AdmissibilityError(f"1 + w_Z / (1 + w_C) must exceed {alpha}")
    knots = control.knots
    phi = _phi_knots(knots, rate)
    phi[-1] = control.s
    merged = np.union1d(knots, phi)
    merged = merged[np.concatenate([[True], np.diff(merged) > 1e-14 * control.s])]
    merged[-1] = control.s
    mids = 0.5 * (merged[1:] + merged[:-1])
    i = control.cell_of(mids)
    # v2 at original time u is w2 / phi' evaluated at sigma = phi^{-1}(u)
    sigma = np.interp(mids, phi, knots)
    j = control.cell_of(sigma)
    return Control(merged, c + z[i] / (1.0 + c), control.v2[j] / rate[j])
