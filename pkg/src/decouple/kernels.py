"""Backend selection for the interpolation kernel.

The compiled extension is used when it was built and ``DECOUPLE_PURE_PYTHON``
is not set to ``1``; otherwise the numpy implementation is used.
"""

from __future__ import annotations

import os

import numpy as np

from . import _interp_py

try:
    from . import _interp_ext as _compiled
except ImportError:  # extension not built
    _compiled = None

POLICIES = {"clampGradient": 0, "linearExtrapolate": 1, "periodic": 2}
ORDERS = {"multilinear": 2, "cubic": 4}

if _compiled is not None and os.environ.get("DECOUPLE_PURE_PYTHON", "0") != "1":
    BACKEND = "cython"
    _impl = _compiled.interpolate
else:
    BACKEND = "python"
    _impl = _interp_py.interpolate


def _prepare(values, lo, h, nodes, points):
    return (
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(lo, dtype=np.float64),
        np.ascontiguousarray(h, dtype=np.float64),
        np.ascontiguousarray(nodes, dtype=np.int64),
        np.ascontiguousarray(points, dtype=np.float64),
    )


def interpolate(values, lo, h, nodes, policy: str, interpolation: str, points) -> np.ndarray:
    """Interpolate node values ``(G, C)`` at ``points (M, n)`` with the active backend."""
    v, lo, h, nodes, pts = _prepare(values, lo, h, nodes, points)
    return _impl(v, lo, h, nodes, POLICIES[policy], ORDERS[interpolation], pts)


def interpolate_python(values, lo, h, nodes, policy, interpolation, points):
    v, lo, h, nodes, pts = _prepare(values, lo, h, nodes, points)
    return _interp_py.interpolate(v, lo, h, nodes, POLICIES[policy], ORDERS[interpolation], pts)


def interpolate_compiled(values, lo, h, nodes, policy, interpolation, points):
    if _compiled is None:
        raise RuntimeError("compiled extension is not available")
    v, lo, h, nodes, pts = _prepare(values, lo, h, nodes, points)
    return _compiled.interpolate(v, lo, h, nodes, POLICIES[policy], ORDERS[interpolation], pts)


def compiled_available() -> bool:
    return _compiled is not None
