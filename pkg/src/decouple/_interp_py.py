"""Pure numpy implementation of the grid interpolation kernel."""

from __future__ import annotations

import numpy as np

CLAMP, LINEAR_EXTRAPOLATE, PERIODIC = 0, 1, 2


def axis_stencil(s: np.ndarray, N: int, policy: int, order: int):
    """Node indices and weights ``(M, order)`` along one axis at scaled coords ``s``."""
    M = s.shape[0]
    idx = np.zeros((M, order), dtype=np.int64)
    w = np.zeros((M, order))
    offs = np.arange(order)
    if policy == PERIODIC:
        s = np.mod(s, N)
        fl = np.floor(s)
        base = fl.astype(np.int64) - (order // 2 - 1)
        u = s - base  # position relative to the first stencil node
        idx[:] = np.mod(base[:, None] + offs, N)
        w[:] = _lagrange(u, order)
        return idx, w
    if policy == CLAMP:
        s = np.clip(s, 0.0, N - 1.0)
    inside = (s >= 0.0) & (s <= N - 1.0)
    fl = np.floor(s)
    base = np.clip(fl.astype(np.int64) - (order // 2 - 1), 0, N - order)
    u = s - base
    idx[:] = base[:, None] + offs
    w[:] = _lagrange(u, order)
    out = ~inside
    if np.any(out):
        # linear extrapolation from the two outermost nodes
        lo_side = s < 0.0
        b2 = np.where(lo_side, 0, N - 2)
        u2 = s - b2
        idx[out] = np.clip(b2[out, None] + offs, 0, N - 1)
        w[out] = 0.0
        w[out, 0] = 1.0 - u2[out]
        w[out, 1] = u2[out]
    return idx, w


def _lagrange(u: np.ndarray, order: int) -> np.ndarray:
    """Lagrange weights on the nodes 0..order-1 evaluated at ``u``."""
    if order == 2:
        return np.stack([1.0 - u, u], axis=1)
    return np.stack(
        [
            -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
            u * (u - 2.0) * (u - 3.0) / 2.0,
            -u * (u - 1.0) * (u - 3.0) / 2.0,
            u * (u - 1.0) * (u - 2.0) / 6.0,
        ],
        axis=1,
    )


def interpolate(values, lo, h, nodes, policy, order, points):
    """Tensor-product interpolation of node values ``(G, C)`` at ``points (M, n)``."""
    M, n = points.shape
    C = values.shape[1]
    flat = np.zeros((M, 1), dtype=np.int64)
    weight = np.ones((M, 1))
    stride = 1
    strides = np.ones(n, dtype=np.int64)
    for a in range(n - 1, -1, -1):
        strides[a] = stride
        stride *= int(nodes[a])
    for a in range(n):
        s = (points[:, a] - lo[a]) / h[a]
        idx, w = axis_stencil(s, int(nodes[a]), policy, order)
        flat = (flat[:, :, None] + strides[a] * idx[:, None, :]).reshape(M, -1)
        weight = (weight[:, :, None] * w[:, None, :]).reshape(M, -1)
    out = np.zeros((M, C))
    for j in range(flat.shape[1]):
        out += weight[:, j, None] * values[flat[:, j]]
    return out
