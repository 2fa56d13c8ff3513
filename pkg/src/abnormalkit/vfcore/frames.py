"""Rank-2 frames (X1, X2) on a manifold embedded in R^n, and the builtin examples."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .expr import ExprError
from .fields import AffineField, DiffConfig, ExprField, Field


class FrameError(ValueError):
    """Malformed frame description or violated frame invariant."""


@dataclass(frozen=True)
class ManifoldFrame:
    """Two fields on R^n tangent to an m-dimensional submanifold.

    ``tangent_frame(x)`` returns an n x m matrix whose columns span the tangent
    space at ``x``. Tangent coordinates of a vector are its coefficients in
    that basis; covectors are given in the dual basis.
    """

    name: str
    ambient_dim: int
    intrinsic_dim: int
    X1: Field
    X2: Field
    base_point: np.ndarray
    tangent_frame: Callable[[np.ndarray], np.ndarray]
    config: DiffConfig = field(default_factory=DiffConfig)
    tangent_frames: Callable[[np.ndarray], np.ndarray] | None = None  # optional batched version

    def __post_init__(self):
        n, m = self.ambient_dim, self.intrinsic_dim
        if self.X1.dim != n or self.X2.dim != n:
            raise FrameError("field dimension does not match the ambient dimension")
        if np.shape(self.base_point) != (n,):
            raise FrameError(f"base point must have {n} coordinates")
        if not 2 <= m <= n:
            raise FrameError("intrinsic dimension must lie between 2 and the ambient dimension")
        if np.shape(self.tangent_frame(self.base_point)) != (n, m):
            raise FrameError("tangent frame has the wrong shape")

    def to_tangent(self, x, vectors) -> np.ndarray:
        """Tangent coordinates of ambient vector(s) at ``x`` (last axis ambient)."""
        basis = self.tangent_frame(np.asarray(x, dtype=float))
        return np.asarray(vectors) @ np.linalg.pinv(basis).T

    def coordinate_maps(self, points) -> np.ndarray:
        """Stack of pseudo-inverses of the tangent frame, shape (K, m, n)."""
        points = np.asarray(points, dtype=float)
        if self.tangent_frames is not None:
            bases = self.tangent_frames(points)
        else:
            bases = np.stack([self.tangent_frame(x) for x in points])
        return np.linalg.pinv(bases)

    def to_tangent_many(self, points, vectors, maps=None) -> np.ndarray:
        """Tangent coordinates of ``vectors[k, ..., :]`` at ``points[k]``."""
        pinvs = self.coordinate_maps(points) if maps is None else maps
        vectors = np.asarray(vectors)
        if vectors.ndim == 2:
            return np.einsum("kmn,kn->km", pinvs, vectors)
        return np.einsum("kmn,kjn->kjm", pinvs, vectors)

    def covector_to_ambient(self, x, covector) -> np.ndarray:
        """Ambient covector that pairs with tangent vectors like ``covector`` does with their coordinates."""
        basis = self.tangent_frame(np.asarray(x, dtype=float))
        return np.asarray(covector) @ np.linalg.pinv(basis)

    def check_tangency(self, points: Sequence[np.ndarray], tol: float = 1e-8) -> float:
        """Largest relative normal component of X1, X2 over ``points``."""
        worst = 0.0
        for x in points:
            basis = self.tangent_frame(x)
            proj = basis @ np.linalg.pinv(basis)
            for fld in (self.X1, self.X2):
                v = fld(x)
                worst = max(worst, np.linalg.norm(v - proj @ v) / max(1.0, np.linalg.norm(v)))
        if worst > tol:
            raise FrameError(f"fields leave the tangent frame (normal component {worst:.2e})")
        return worst


def so3_generators() -> np.ndarray:
    """``(T_i)_jk = -eps_ijk``, so that ``[T1, T2] = T3`` cyclically."""
    gens = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        gens[i, j, k] = -1.0
        gens[i, k, j] = 1.0
    return gens


def matrix_group_frame(
    name: str,
    generators: np.ndarray,
    abelian_dim: int,
    x1: Sequence[float],
    x2: Sequence[float],
    base_point: np.ndarray | None = None,
) -> ManifoldFrame:
    """Left-invariant frame on G x R^k for a matrix group G.

    Points are ``(vec(R), theta)`` with ``vec`` row-major. Coefficient vectors
    ``x1`` and ``x2`` are given in the basis (generators..., e_1..e_k).
    """
    generators = np.asarray(generators, dtype=float)
    g, d, _ = generators.shape
    n = d * d + abelian_dim
    m = g + abelian_dim
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != (m,) or x2.shape != (m,):
        raise FrameError(f"coefficient vectors must have length {m}")

    def left_invariant(coeffs):
        algebra = np.tensordot(coeffs[:g], generators, axes=1)
        mat = np.zeros((n, n))
        mat[: d * d, : d * d] = np.kron(np.eye(d), algebra.T)
        offset = np.zeros(n)
        offset[d * d :] = coeffs[g:]
        return AffineField(mat, offset)

    def tangent_frames(xs):
        R = xs[:, : d * d].reshape(-1, d, d)
        cols = np.zeros((len(xs), n, m))
        cols[:, : d * d, :g] = np.einsum("kab,ibc->kaci", R, generators).reshape(len(xs), d * d, g)
        cols[:, d * d :, g:] = np.eye(abelian_dim)
        return cols

    def tangent_frame(x):
        return tangent_frames(np.asarray(x, dtype=float)[None])[0]

    if base_point is None:
        base_point = np.concatenate([np.eye(d).ravel(), np.zeros(abelian_dim)])
    return ManifoldFrame(
        name,
        n,
        m,
        left_invariant(x1),
        left_invariant(x2),
        np.asarray(base_point, float),
        tangent_frame,
        tangent_frames=tangent_frames,
    )


def _engel_so3r() -> ManifoldFrame:
    r2 = np.sqrt(2.0)
    return matrix_group_frame(
        "engel-so3r", so3_generators(), 1, np.array([1.0, 1.0, 0.0, 2.0]) / r2, np.array([1.0, 0.0, 0.0, 1.0]) / r2
    )


def _identity_frame(n):
    eye = np.eye(n)
    return lambda x: eye


def expression_frame(
    name: str,
    dim: int,
    x1: Sequence[str] | str,
    x2: Sequence[str] | str,
    base_point: Sequence[float] | None = None,
    tangent_frame: Callable | None = None,
    intrinsic_dim: int | None = None,
    config: DiffConfig | None = None,
) -> ManifoldFrame:
    f1 = ExprField.parse(x1, dim)
    f2 = ExprField.parse(x2, dim)
    bp = np.zeros(dim) if base_point is None else np.asarray(base_point, dtype=float)
    return ManifoldFrame(
        name,
        dim,
        intrinsic_dim or dim,
        f1,
        f2,
        bp,
        tangent_frame or _identity_frame(dim),
        config or DiffConfig(),
    )


def _martinet() -> ManifoldFrame:
    # singular curve (t, 0, 0) that is also normal, so not strictly abnormal
    return expression_frame("martinet", 3, ["1", "0", "x2*x2/2"], ["0", "1", "0"])


def _heisenberg() -> ManifoldFrame:
    # every nonconstant curve has surjective endpoint differential
    return expression_frame("heisenberg", 3, ["1", "0", "-x2/2"], ["0", "1", "x1/2"])


BUILTIN_FRAMES: dict[str, Callable[[], ManifoldFrame]] = {
    "engel-so3r": _engel_so3r,
    "martinet": _martinet,
    "heisenberg": _heisenberg,
}


def builtin_frame(name: str) -> ManifoldFrame:
    try:
        return BUILTIN_FRAMES[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_FRAMES))
        raise FrameError(f"unknown builtin frame {name!r} (known: {known})") from None


def frame_from_dict(data: dict, name: str = "custom", config: DiffConfig | None = None) -> ManifoldFrame:
    """Build a frame from the JSON layout ``{ambient_dim, fields: {X1, X2}, base_point, tangent_frame}``."""
    try:
        n = int(data["ambient_dim"])
        fields = data["fields"]
        x1, x2 = fields["X1"], fields["X2"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FrameError(f"frame description is missing {exc}") from None
    layout = data.get("tangent_frame", "identity")
    if layout == "identity":
        tangent, m = None, n
    elif isinstance(layout, str) and layout.startswith("builtin:"):
        ref = builtin_frame(layout.split(":", 1)[1])
        if ref.ambient_dim != n:
            raise FrameError(f"tangent frame {layout} lives in dimension {ref.ambient_dim}, not {n}")
        tangent, m = ref.tangent_frame, ref.intrinsic_dim
    else:
        raise FrameError(f"unsupported tangent_frame {layout!r}")
    base = data.get("base_point")
    if base is not None and len(base) != n:
        raise FrameError(f"base point must have {n} coordinates")
    try:
        return expression_frame(name, n, x1, x2, base, tangent, m, config)
    except ExprError as exc:
        raise FrameError(f"bad field expression: {exc}") from exc


def load_frame(source: str, config: DiffConfig | None = None) -> ManifoldFrame:
    """A builtin name or a path to a JSON frame file."""
    if source in BUILTIN_FRAMES:
        frame = builtin_frame(source)
        return frame if config is None else _with_config(frame, config)
    path = Path(source)
    if not path.exists():
        raise FrameError(f"{source!r} is neither a builtin frame nor a file")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FrameError(f"{source}: invalid JSON ({exc})") from exc
    return frame_from_dict(data, path.stem, config)


def _with_config(frame: ManifoldFrame, config: DiffConfig) -> ManifoldFrame:
    from dataclasses import replace

    return replace(frame, config=config)
