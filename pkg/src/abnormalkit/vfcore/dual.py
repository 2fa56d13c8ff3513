"""Nestable forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a value and a tangent together with an integer tag.
Tags order the perturbations: when two duals with different tags meet, the
one with the higher tag treats the other as a constant. This is what lets
``jvp`` be applied to a function that itself calls ``jvp`` (nested brackets)
without perturbation confusion.
"""

from __future__ import annotations

import itertools

import numpy as np

_tags = itertools.count(1)


def new_tag() -> int:
    return next(_tags)


class Dual:
    """Value plus first-order tangent for a single perturbation tag."""

    __slots__ = ("val", "eps", "tag")
    __array_priority__ = 1000

    def __init__(self, val, eps, tag: int):
        self.val = val
        self.eps = eps
        self.tag = tag

    def __repr__(self) -> str:
        return f"Dual(val={self.val!r}, eps={self.eps!r}, tag={self.tag})"

    # array-like surface
    @property
    def shape(self):
        return np.shape(self.val)

    @property
    def ndim(self):
        return np.ndim(self.val)

    def __len__(self):
        return len(self.val)

    def __getitem__(self, key):
        return Dual(self.val[key], _index(self.eps, key), self.tag)

    def reshape(self, *shape):
        return Dual(np.reshape(self.val, *shape), _reshape(self.eps, self.val, shape), self.tag)

    def ravel(self):
        return self.reshape(-1)

    @property
    def T(self):
        return Dual(_transpose(self.val), _transpose(_full(self.eps, self.val)), self.tag)

    def sum(self, axis=None):
        return Dual(_sum(self.val, axis), _sum(_full(self.eps, self.val), axis), self.tag)

    # arithmetic goes through the ufunc protocol
    def __add__(self, other):
        return np.add(self, other)

    def __radd__(self, other):
        return np.add(other, self)

    def __sub__(self, other):
        return np.subtract(self, other)

    def __rsub__(self, other):
        return np.subtract(other, self)

    def __mul__(self, other):
        return np.multiply(self, other)

    def __rmul__(self, other):
        return np.multiply(other, self)

    def __truediv__(self, other):
        return np.true_divide(self, other)

    def __rtruediv__(self, other):
        return np.true_divide(other, self)

    def __matmul__(self, other):
        return np.matmul(self, other)

    def __rmatmul__(self, other):
        return np.matmul(other, self)

    def __pow__(self, other):
        return np.power(self, other)

    def __neg__(self):
        return np.negative(self)

    def __pos__(self):
        return self

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        rule = _RULES.get(ufunc)
        if rule is None:
            return NotImplemented
        tag = max(x.tag for x in inputs if isinstance(x, Dual))
        return rule(tag, *inputs)

    def __array_function__(self, func, types, args, kwargs):
        impl = _FUNCTIONS.get(func)
        if impl is None:
            return NotImplemented
        return impl(*args, **kwargs)


def _split(x, tag):
    """Return (value, tangent) of ``x`` w.r.t. ``tag``; tangent None means zero."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.val, x.eps
    return x, None


def _full(eps, val):
    """Materialize a possibly-scalar-zero tangent to the shape of ``val``."""
    if eps is None:
        return np.zeros(np.shape(val))
    return eps


def _index(eps, key):
    return eps[key]


def _reshape(eps, val, shape):
    return np.reshape(_full(eps, val), *shape)


def _transpose(x):
    return x.T if hasattr(x, "T") else np.transpose(x)


def _sum(x, axis):
    if isinstance(x, Dual):
        return x.sum(axis)
    return np.sum(x, axis=axis)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _neg(a):
    return None if a is None else -a


def _make(tag, val, eps):
    if eps is None:
        eps = np.zeros(np.shape(val))
    return Dual(val, eps, tag)


def _r_add(tag, a, b):
    av, ae = _split(a, tag)
    bv, be = _split(b, tag)
    return _make(tag, av + bv, _add(ae, be))


def _r_sub(tag, a, b):
    av, ae = _split(a, tag)
    bv, be = _split(b, tag)
    return _make(tag, av - bv, _add(ae, _neg(be)))


def _r_mul(tag, a, b):
    av, ae = _split(a, tag)
    bv, be = _split(b, tag)
    eps = _add(None if ae is None else ae * bv, None if be is None else av * be)
    return _make(tag, av * bv, eps)


def _r_div(tag, a, b):
    av, ae = _split(a, tag)
    bv, be = _split(b, tag)
    q = av / bv
    eps = _add(None if ae is None else ae / bv, None if be is None else -(q * be) / bv)
    return _make(tag, q, eps)


def _r_matmul(tag, a, b):
    av, ae = _split(a, tag)
    bv, be = _split(b, tag)
    eps = _add(None if ae is None else ae @ bv, None if be is None else av @ be)
    return _make(tag, av @ bv, eps)


def _r_power(tag, a, b):
    if isinstance(b, Dual) and b.tag == tag:
        raise TypeError("dual exponents are not supported")
    av, ae = _split(a, tag)
    val = av**b
    eps = None if ae is None else (b * av ** (b - 1)) * ae
    return _make(tag, val, eps)


def _unary(fn, dfn):
    def rule(tag, a):
        av, ae = _split(a, tag)
        return _make(tag, fn(av), None if ae is None else dfn(av) * ae)

    return rule


def _r_sqrt(tag, a):
    av, ae = _split(a, tag)
    r = np.sqrt(av)
    return _make(tag, r, None if ae is None else ae / (2.0 * r))


def _r_exp(tag, a):
    av, ae = _split(a, tag)
    e = np.exp(av)
    return _make(tag, e, None if ae is None else e * ae)


_RULES = {
    np.add: _r_add,
    np.subtract: _r_sub,
    np.multiply: _r_mul,
    np.true_divide: _r_div,
    np.matmul: _r_matmul,
    np.power: _r_power,
    np.negative: _unary(np.negative, lambda v: -1.0),
    np.positive: _unary(np.positive, lambda v: 1.0),
    np.sin: _unary(np.sin, np.cos),
    np.cos: _unary(np.cos, lambda v: -np.sin(v)),
    np.tan: _unary(np.tan, lambda v: 1.0 / np.cos(v) ** 2),
    np.log: _unary(np.log, lambda v: 1.0 / v),
    np.square: _unary(np.square, lambda v: 2.0 * v),
    np.exp: _r_exp,
    np.sqrt: _r_sqrt,
}


def stack(items, axis: int = 0):
    """``np.stack`` that understands duals (possibly nested, possibly mixed)."""
    tags = [x.tag for x in items if isinstance(x, Dual)]
    if not tags:
        return np.stack([np.asarray(x) if not isinstance(x, np.ndarray) else x for x in items], axis=axis)
    tag = max(tags)
    vals, epss = [], []
    for x in items:
        v, e = _split(x, tag)
        vals.append(v)
        epss.append(_full(e, v) if e is None else e)
    return Dual(stack(vals, axis), stack(epss, axis), tag)


def concatenate(items, axis: int = 0):
    tags = [x.tag for x in items if isinstance(x, Dual)]
    if not tags:
        return np.concatenate(items, axis=axis)
    tag = max(tags)
    vals, epss = [], []
    for x in items:
        v, e = _split(x, tag)
        vals.append(v)
        epss.append(_full(e, v) if e is None else e)
    return Dual(concatenate(vals, axis), concatenate(epss, axis), tag)


def _np_stack(arrays, axis=0, out=None):
    return stack(list(arrays), axis)


def _np_concatenate(arrays, axis=0, out=None, **_):
    return concatenate(list(arrays), axis)


def _np_dot(a, b, out=None):
    return np.matmul(a, b)


def _np_sum(a, axis=None, **_):
    return a.sum(axis)


_FUNCTIONS = {
    np.shape: lambda a: np.shape(a.val),
    np.ndim: lambda a: np.ndim(a.val),
    np.stack: _np_stack,
    np.concatenate: _np_concatenate,
    np.dot: _np_dot,
    np.sum: _np_sum,
}


def jvp(fn, x, v):
    """Return ``(fn(x), Dfn(x) v)`` by pushing a fresh dual through ``fn``."""
    tag = new_tag()
    out = fn(Dual(x, v, tag))
    if isinstance(out, Dual) and out.tag == tag:
        return out.val, out.eps
    return out, 0.0 * out
