"""Vector fields on R^n and their Lie brackets.

Bracket convention: ``[A, B](x) = DB(x) A(x) - DA(x) B(x)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dual
from .expr import FieldExpr, parse_field


class AccuracyWarning(UserWarning):
    """Finite differences nested deep enough to lose most significant digits."""


@dataclass(frozen=True)
class DiffConfig:
    """How directional derivatives of non-affine fields are taken."""

    mode: str = "dual"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.mode not in ("dual", "fd"):
            raise ValueError(f"unknown differentiation mode {self.mode!r}")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")


DEFAULT_DIFF = DiffConfig()

# nesting depth of finite differences beyond which we warn
FD_DEPTH_WARNING = 3


def _base_value(x):
    while isinstance(x, dual.Dual):
        x = x.val
    return np.asarray(x, dtype=float)


def fd_jvp(fn, x, v, step: float):
    """Central difference along ``v`` with a step relative to ``|x|`` (per column for batches)."""
    vn = np.linalg.norm(_base_value(v), axis=0)
    xn = np.linalg.norm(_base_value(x), axis=0)
    safe = np.where(vn > 0, vn, 1.0)
    h = step * np.maximum(1.0, xn) / safe
    return (fn(x + h * v) - fn(x - h * v)) / (2.0 * h)


class Field:
    """A smooth map R^n -> R^n. Subclasses implement ``__call__``.

    Inputs are a point of shape ``(n,)`` or a batch of points stored as the
    columns of an ``(n, K)`` array; outputs have the same shape.
    """

    dim: int
    dual_safe = True
    batch_safe = True
    depth = 0

    def __call__(self, x):
        raise NotImplementedError

    def jvp(self, x, v, config: DiffConfig | None = None):
        config = config or DEFAULT_DIFF
        if config.mode == "dual" and self.dual_safe:
            return dual.jvp(self, x, v)[1]
        return fd_jvp(self, x, v, config.fd_step)

    def jacobian(self, x, config: DiffConfig | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        if self.batch_safe:
            # all directions at once: column i of the batch differentiates along e_i
            cols = np.repeat(x[:, None], n, axis=1)
            return np.asarray(self.jvp(cols, np.eye(n), config))
        return np.stack([self.jvp(x, e, config) for e in np.eye(n)], axis=1)

    def jacobian_many(self, xs, config: DiffConfig | None = None) -> np.ndarray:
        """Jacobians at the rows of ``xs``, shape ``(K, n, n)``."""
        xs = np.asarray(xs, dtype=float)
        if not self.batch_safe:
            return np.stack([self.jacobian(x, config) for x in xs])
        K, n = xs.shape
        out = np.empty((K, n, n))
        for i in range(n):
            e = np.zeros((n, K))
            e[i] = 1.0
            out[:, :, i] = np.asarray(self.jvp(xs.T, e, config)).T
        return out

    def many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``xs``."""
        xs = np.asarray(xs, dtype=float)
        if self.batch_safe:
            return np.asarray(self(xs.T)).T
        return np.array([self(x) for x in xs])


class AffineField(Field):
    """``x -> M x + c``. Derivatives and brackets are exact."""

    def __init__(self, matrix, offset=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.dim = self.matrix.shape[0]
        if self.matrix.shape != (self.dim, self.dim):
            raise ValueError("affine field needs a square matrix")
        self.offset = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=float)

    def __call__(self, x):
        c = self.offset if np.ndim(x) == 1 else self.offset[:, None]
        return self.matrix @ x + c

    def jvp(self, x, v, config=None):
        return self.matrix @ v

    def jacobian(self, x, config=None):
        return self.matrix.copy()

    def jacobian_many(self, xs, config=None):
        return np.broadcast_to(self.matrix, (len(xs),) + self.matrix.shape).copy()

    def many(self, xs):
        return np.asarray(xs) @ self.matrix.T + self.offset

    def __repr__(self):
        return f"AffineField(dim={self.dim})"


class ExprField(Field):
    """Field parsed from component expressions."""

    def __init__(self, expr: FieldExpr):
        self.expr = expr
        self.dim = expr.dim

    @classmethod
    def parse(cls, source, dim: int) -> "ExprField":
        return cls(parse_field(source, dim))

    def __call__(self, x):
        comps = self.expr(x)
        shape = np.shape(x)[1:]
        duals = False
        for i, c in enumerate(comps):
            if isinstance(c, dual.Dual):
                duals = True
            elif shape and np.shape(c) != shape:
                # constant component, spread over the batch
                comps[i] = np.full(shape, c, dtype=float)
        if duals:
            return dual.stack(comps)
        return np.array(comps, dtype=float)

    def __repr__(self):
        return f"ExprField({self.expr})"


class CallableField(Field):
    """Wraps an arbitrary callable. Unless declared dual-safe it is differentiated by finite differences."""

    def __init__(self, fn: Callable, dim: int, dual_safe: bool = False, batch_safe: bool = False):
        self.fn = fn
        self.dim = dim
        self.dual_safe = dual_safe
        self.batch_safe = batch_safe

    def __call__(self, x):
        if np.ndim(x) == 2 and not self.batch_safe:
            return np.stack([self.fn(col) for col in np.asarray(x).T], axis=1)
        return self.fn(x)


class BracketField(Field):
    """Lazy Lie bracket of two fields."""

    def __init__(self, left: Field, right: Field, config: DiffConfig | None = None):
        if left.dim != right.dim:
            raise ValueError("bracket of fields on different dimensions")
        self.left = left
        self.right = right
        self.dim = left.dim
        self.config = config or DEFAULT_DIFF
        self.dual_safe = left.dual_safe and right.dual_safe
        self.batch_safe = left.batch_safe and right.batch_safe
        self.depth = 1 + max(left.depth, right.depth)

    def __call__(self, x):
        a, b, cfg = self.left, self.right, self.config
        return b.jvp(x, a(x), cfg) - a.jvp(x, b(x), cfg)

    def jvp(self, x, v, config=None):
        return super().jvp(x, v, config or self.config)

    def __repr__(self):
        return f"[{self.left!r}, {self.right!r}]"


def bracket_field(left: Field, right: Field, config: DiffConfig | None = None) -> Field:
    """The field ``[left, right]``; closed form when both are affine."""
    if isinstance(left, AffineField) and isinstance(right, AffineField):
        ma, mb = left.matrix, right.matrix
        return AffineField(mb @ ma - ma @ mb, mb @ left.offset - ma @ right.offset)
    config = config or DEFAULT_DIFF
    out = BracketField(left, right, config)
    if (config.mode == "fd" or not out.dual_safe) and out.depth >= FD_DEPTH_WARNING:
        warnings.warn(
            f"bracket of depth {out.depth} through finite differences; expect roughly "
            f"{out.depth} x log10(1/fd_step) digits of cancellation",
            AccuracyWarning,
            stacklevel=2,
        )
    return out


def lie_bracket(left: Field, right: Field, x, config: DiffConfig | None = None):
    return bracket_field(left, right, config)(np.asarray(x, dtype=float))


def ad_fields(left: Field, right: Field, k: int, config: DiffConfig | None = None) -> list[Field]:
    """``[right, ad_left right, ..., ad_left^k right]``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    out = [right]
    for _ in range(k):
        out.append(bracket_field(left, out[-1], config))
    return out


def iterated_ad(left: Field, right: Field, k: int, x, config: DiffConfig | None = None):
    return ad_fields(left, right, k, config)[-1](np.asarray(x, dtype=float))
