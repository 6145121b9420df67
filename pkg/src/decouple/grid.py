"""Tensor-product grids, field interpolation and finite-difference diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on ``box``. Nodes are flattened in C order (last axis fastest).

    With ``boundary_policy="periodic"`` the upper end of each axis is identified
    with the lower end and is not a node.
    """

    box: tuple
    nodes: tuple
    boundary_policy: str = "linearExtrapolate"
    interpolation: str = "cubic"

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        nodes = tuple(int(v) for v in self.nodes)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "nodes", nodes)
        if len(box) != len(nodes) or not box:
            raise ConfigError("box and nodes must have the same positive length")
        if any(hi <= lo for lo, hi in box):
            raise ConfigError(f"degenerate box {box}")
        if any(v < 4 for v in nodes):
            raise ConfigError("need at least 4 nodes per axis")
        if self.boundary_policy not in kernels.POLICIES:
            raise ConfigError(f"unknown boundary policy {self.boundary_policy!r}")
        if self.interpolation not in kernels.ORDERS:
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def periodic(self) -> bool:
        return self.boundary_policy == "periodic"

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def lo(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box])

    @property
    def spacing(self) -> np.ndarray:
        div = [N if self.periodic else N - 1 for N in self.nodes]
        return np.array([(hi - lo) / k for (lo, hi), k in zip(self.box, div)])

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(N) for lo, h, N in zip(self.lo, self.spacing, self.nodes)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def scaled(self, lam: float) -> "GridSpec":
        box = tuple((lam * lo, lam * hi) for lo, hi in self.box)
        return GridSpec(box, self.nodes, self.boundary_policy, self.interpolation)

    def refined(self) -> "GridSpec":
        """Grid with half the spacing on the same box."""
        nodes = tuple(2 * N if self.periodic else 2 * N - 1 for N in self.nodes)
        return GridSpec(self.box, nodes, self.boundary_policy, self.interpolation)

    def to_dict(self) -> dict:
        return {
            "box": [list(b) for b in self.box],
            "nodes": list(self.nodes),
            "boundary_policy": self.boundary_policy,
            "interpolation": self.interpolation,
        }

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Interpolate node values ``(G, ...)`` at ``points (M, n)`` -> ``(M, ...)``."""
        G = values.shape[0]
        flat = values.reshape(G, -1)
        out = kernels.interpolate(
            flat, self.lo, self.spacing, np.array(self.nodes), self.boundary_policy,
            self.interpolation, points,
        )
        return out.reshape((points.shape[0],) + values.shape[1:])


def gradient(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Second-order finite-difference gradient of node values ``(G, ...)``.

    Returns ``(G, ..., n)``: central differences inside, periodic wrap or
    second-order one-sided differences at the boundary.
    """
    G = values.shape[0]
    tail = values.shape[1:]
    V = values.reshape(grid.nodes + tail)
    out = []
    for a, h in enumerate(grid.spacing):
        if grid.periodic:
            D = (np.roll(V, -1, axis=a) - np.roll(V, 1, axis=a)) / (2 * h)
        else:
            D = np.gradient(V, h, axis=a, edge_order=2)
        out.append(D.reshape((G,) + tail))
    return np.stack(out, axis=-1)


def forward_jacobian(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobian per cell, ``(G', C, n)`` over nodes with a forward neighbour."""
    G = values.shape[0]
    V = values.reshape(grid.nodes + (-1,))
    cols = []
    for a, h in enumerate(grid.spacing):
        if grid.periodic:
            D = (np.roll(V, -1, axis=a) - V) / h
        else:
            D = np.diff(V, axis=a) / h
            pad = [(0, 0)] * V.ndim
            pad[a] = (0, 1)
            D = np.pad(D, pad, mode="edge")
        cols.append(D.reshape(G, -1))
    return np.stack(cols, axis=-1)


def lipschitz_estimate(grid: GridSpec, values: np.ndarray, operator: bool) -> float:
    """Max finite-difference slope of a node field ``(G, ...)``.

    ``operator=True`` uses the operator norm of each cell Jacobian (for
    ``u^(0)`` as a map R^n -> R^m), otherwise its Frobenius norm.
    """
    J = forward_jacobian(grid, values)
    if not np.all(np.isfinite(J)):
        return float("inf")
    if operator and min(J.shape[1:]) > 1:  # rank-one cells: both norms agree
        return float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))
    return float(np.max(np.sqrt(np.sum(J * J, axis=(1, 2)))))
