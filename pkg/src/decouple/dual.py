"""Tagged forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a primal part ``re`` and a tangent ``du`` of the same
shape. Both parts may themselves be duals of *lower* tags, which gives nested
(higher order) forward mode. Each call to :func:`seed` draws a fresh, strictly
increasing tag; binary operations treat operands with a smaller tag as constants
with respect to the larger one, so nested directional derivatives never mix.

Only the operations the generator recursion needs are supported: elementwise
arithmetic, indexing/reshaping, stacking, ``einsum`` with two operands, and
batched linear solves.
"""

from __future__ import annotations

import itertools

import numpy as np

_tags = itertools.count(1)


class Dual:
    __slots__ = ("re", "du", "tag")
    __array_ufunc__ = None

    def __init__(self, re, du, tag: int):
        self.re = re
        self.du = du
        self.tag = tag

    @property
    def shape(self):
        return np.shape(self.re) if not isinstance(self.re, Dual) else self.re.shape

    @property
    def ndim(self):
        return len(self.shape)

    def __repr__(self):
        return f"Dual(tag={self.tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other)

    def __rsub__(self, other):
        return add(other, -self)

    def __neg__(self):
        return Dual(-self.re, -self.du, self.tag)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            raise TypeError("division by a Dual is not supported")
        return Dual(self.re / other, self.du / other, self.tag)

    def __getitem__(self, idx):
        return Dual(self.re[idx], self.du[idx], self.tag)

    def reshape(self, *shape):
        return Dual(self.re.reshape(*shape), self.du.reshape(*shape), self.tag)


def tag_of(x) -> int:
    return x.tag if isinstance(x, Dual) else 0


def _split(x, tag):
    """Primal and tangent of ``x`` with respect to ``tag`` (tangent None if constant)."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.re, x.du
    return x, None


def add(a, b):
    t = max(tag_of(a), tag_of(b))
    if t == 0:
        return np.add(a, b)
    ar, ad = _split(a, t)
    br, bd = _split(b, t)
    if ad is None:
        du = bd
    elif bd is None:
        du = ad
    else:
        du = ad + bd
    full = np.broadcast_shapes(shape_of(ar), shape_of(br))
    if shape_of(du) != full:
        du = du + np.zeros(full)
    return Dual(ar + br, du, t)


def mul(a, b):
    t = max(tag_of(a), tag_of(b))
    if t == 0:
        return np.multiply(a, b)
    ar, ad = _split(a, t)
    br, bd = _split(b, t)
    if ad is None:
        du = ar * bd
    elif bd is None:
        du = ad * br
    else:
        du = ad * br + ar * bd
    return Dual(ar * br, du, t)


def shape_of(x):
    return x.shape if isinstance(x, Dual) else np.shape(x)


def einsum(subscripts: str, a, b):
    """Two-operand einsum, bilinear in (a, b)."""
    t = max(tag_of(a), tag_of(b))
    if t == 0:
        return np.einsum(subscripts, a, b, optimize=False)
    ar, ad = _split(a, t)
    br, bd = _split(b, t)
    re = einsum(subscripts, ar, br)
    if ad is None:
        du = einsum(subscripts, ar, bd)
    elif bd is None:
        du = einsum(subscripts, ad, br)
    else:
        du = einsum(subscripts, ad, br) + einsum(subscripts, ar, bd)
    return Dual(re, du, t)


def tdot(A, B, q: int = 1):
    """Batched generalized product: contract the last ``q`` non-batch axes of A
    with the first ``q`` non-batch axes of B. Axis 0 of both is the batch axis."""
    ra = len(shape_of(A)) - 1
    rb = len(shape_of(B)) - 1
    letters = "abcdefghijklmnopqrstuvwxyz"
    a_free = letters[: ra - q]
    c = letters[ra - q : ra]
    b_free = letters[ra : ra + rb - q]
    subscripts = f"Z{a_free}{c},Z{c}{b_free}->Z{a_free}{b_free}"
    return einsum(subscripts, A, B)


def apply_linear(fn, x):
    """Apply a linear, shape-manipulating map (slicing, reshape, moveaxis...)."""
    if isinstance(x, Dual):
        return Dual(apply_linear(fn, x.re), apply_linear(fn, x.du), x.tag)
    return fn(x)


def _zeros_like_primal(x):
    return np.zeros(shape_of(x))


def stack(seq, axis: int = 0):
    seq = list(seq)
    t = max(tag_of(s) for s in seq)
    if t == 0:
        return np.stack(seq, axis=axis)
    parts = [_split(s, t) for s in seq]
    re = stack([p[0] for p in parts], axis=axis)
    du = stack(
        [p[1] if p[1] is not None else _zeros_like_primal(p[0]) for p in parts], axis=axis
    )
    return Dual(re, du, t)


def concatenate(seq, axis: int = 0):
    seq = list(seq)
    t = max(tag_of(s) for s in seq)
    if t == 0:
        return np.concatenate(seq, axis=axis)
    parts = [_split(s, t) for s in seq]
    re = concatenate([p[0] for p in parts], axis=axis)
    du = concatenate(
        [p[1] if p[1] is not None else _zeros_like_primal(p[0]) for p in parts], axis=axis
    )
    return Dual(re, du, t)


def solve(S, R):
    """Batched solve S X = R with S of shape (N, p, p) and R of shape (N, p, r)."""
    t = max(tag_of(S), tag_of(R))
    if t == 0:
        return np.linalg.solve(S, R)
    Sr, Sd = _split(S, t)
    Rr, Rd = _split(R, t)
    X = solve(Sr, Rr)
    rhs = Rd if Rd is not None else None
    if Sd is not None:
        corr = einsum("Zij,Zjk->Zik", Sd, X)
        rhs = -corr if rhs is None else rhs - corr
    return Dual(X, solve(Sr, rhs), t)


def primal(x):
    while isinstance(x, Dual):
        x = x.re
    return x


def seed(x, tangent) -> Dual:
    """Attach a tangent under a fresh tag (larger than every existing tag)."""
    return Dual(x, tangent, next(_tags))


def new_tag() -> int:
    return next(_tags)


def tangent(y, tag: int):
    """Directional derivative carried by ``y`` under ``tag`` (zero if independent)."""
    if isinstance(y, Dual):
        if y.tag == tag:
            return y.du
        if y.tag > tag:
            raise ValueError("result carries a tag newer than the requested seed")
    return np.zeros(shape_of(y))


def strip(y, tag: int):
    """Primal part of ``y`` with respect to ``tag``."""
    if isinstance(y, Dual) and y.tag == tag:
        return y.re
    return y
