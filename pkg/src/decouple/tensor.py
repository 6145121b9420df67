"""Generalized-matrix algebra.

A generalized matrix in R^{n_1 x ... x n_k} is stored as a dense numpy array
whose shape is ``(n_1, ..., n_k)`` (row-major). The canonical identification of
``A in R^{... x_i n}`` with a sequence ``A_1, ..., A_n`` slices along the LAST
axis.

Two products are provided:

* :func:`gm_product` contracts the last axis of ``A`` with the first axis of ``B``.
* :func:`gm_md_contract` contracts a trailing ``(m, d)`` pair of ``A`` with a
  leading ``(m, d)`` pair of ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergenceError, ShapeMismatchError, SingularityError


@dataclass(frozen=True)
class Shape:
    """Index shape of a generalized matrix with optional ``(m x d)`` pair marks.

    ``md_marks`` holds the start positions ``i`` of adjacent pairs ``(i, i+1)``
    that are to be read as one ``(m x d)`` index.
    """

    dims: tuple[int, ...]
    md_marks: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if any(int(n) < 1 for n in self.dims):
            raise ShapeMismatchError(f"all dims must be >= 1, got {self.dims}")

    def validate(self, m: int, d: int) -> None:
        for i in self.md_marks:
            if i + 1 >= len(self.dims) or (self.dims[i], self.dims[i + 1]) != (m, d):
                raise ShapeMismatchError(
                    f"md mark at {i} does not sit on an ({m}, {d}) pair of {self.dims}"
                )

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))


def gm_product(A, B) -> np.ndarray:
    """C(x..., y...) = sum_z A(x..., z) B(z, y...)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 0 or B.ndim == 0:
        raise ShapeMismatchError("generalized matrices need at least one axis")
    if A.shape[-1] != B.shape[0]:
        raise ShapeMismatchError(
            f"last dim of A ({A.shape[-1]}) != first dim of B ({B.shape[0]})"
        )
    return np.tensordot(A, B, axes=1)


def gm_md_contract(A, B, m: int, d: int) -> np.ndarray:
    """Contract the trailing ``(m, d)`` pair of A with the leading pair of B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim < 2 or A.shape[-2:] != (m, d):
        raise ShapeMismatchError(f"A must end in ({m}, {d}), got {A.shape}")
    if B.ndim < 2 or B.shape[:2] != (m, d):
        raise ShapeMismatchError(f"B must start with ({m}, {d}), got {B.shape}")
    return np.tensordot(A, B, axes=2)


def md_identity(m: int, d: int) -> np.ndarray:
    """The generalized identity Id_{m x d} in R^{(m x d) x (m x d)}."""
    return np.eye(m * d).reshape(m, d, m, d)


def frobenius_norm(A) -> float:
    """Square root of the sum of squared entries, for any number of axes."""
    A = np.asarray(A, dtype=float)
    return float(np.sqrt(np.sum(A * A)))


def as_linear_map(A, out_axes: int | None = None) -> np.ndarray:
    """Flatten a generalized matrix into a 2-axis matrix.

    The first ``out_axes`` axes form the row index, the rest the column index.
    By default a 2-axis array is left alone and otherwise the axes are split in
    half, so that ``(m, d, m, d)`` becomes an ``(m*d) x (m*d)`` matrix.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        return A.reshape(1, -1)
    if out_axes is None:
        out_axes = A.ndim // 2
    rows = int(np.prod(A.shape[:out_axes], dtype=np.int64))
    return A.reshape(rows, -1)


def operator_norm(
    A, out_axes: int | None = None, rtol: float = 1e-10, max_iter: int = 10_000
) -> float:
    """Spectral norm by power iteration on A^T A from the normalized all-ones vector."""
    M = as_linear_map(A, out_axes)
    G = M.T @ M
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # all-ones start lies in the null space; fall back to basis vectors
            for e in np.eye(G.shape[0]):
                if np.linalg.norm(G @ e) > 0:
                    w = G @ e
                    nw = np.linalg.norm(w)
                    break
            else:
                return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= rtol * abs(new):
            return float(np.sqrt(max(new, 0.0)))
        lam = new
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def neumann_inverse_apply(vsz, rhs, tol: float = 1e-12) -> np.ndarray:
    """Return (Id_{m x d} - vsz)^{-1} . rhs.

    ``vsz`` has shape ``(m, d, m, d)``; ``rhs`` has a leading ``(m, d)`` pair.
    Computed by a dense solve on the flattened ``m*d`` space. Raises
    :class:`SingularityError` if the operator norm of ``vsz`` is not below one.
    """
    vsz = np.asarray(vsz, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if vsz.ndim != 4 or vsz.shape[:2] != vsz.shape[2:]:
        raise ShapeMismatchError(f"vsz must have shape (m, d, m, d), got {vsz.shape}")
    m, d = vsz.shape[:2]
    if rhs.shape[:2] != (m, d):
        raise ShapeMismatchError(f"rhs must start with ({m}, {d}), got {rhs.shape}")
    q = operator_norm(vsz, out_axes=2)
    if q >= 1.0:
        raise SingularityError(f"||v sigma_z||_op = {q:.6g} >= 1")
    K = vsz.reshape(m * d, m * d)
    R = rhs.reshape(m * d, -1)
    S = np.eye(m * d) - K
    out = np.linalg.solve(S, R)
    res = np.linalg.norm(S @ out - R)
    if res > tol * (1.0 + np.linalg.norm(R)):
        raise SingularityError(f"linear solve residual {res:.3g} exceeds tolerance")
    return out.reshape(rhs.shape)
