"""Backward grid scheme for the k-decoupling field stack ``(u^(0), ..., u^(k))``.

One step from ``t + dt`` to ``t`` at every node ``x``:

1. ``y^(i) = u^(i)(t+dt, x)``; ``z^(0)`` solves ``z = Du^(0) sigma(t+dt, x, y, z)``
   with ``Du^(0) = u^(1)``; ``z^(i) = Du^(i) sigma`` where ``Du^(i) = u^(i+1)``
   for ``i < k`` and a grid finite difference of ``u^(k)`` at the top level.
2. ``u^(i)(t, x) = E[u^(i)(t+dt, x + mu dt + sigma sqrt(dt) w)] - phi^(i)(theta) dt``
   with ``w`` on a tensor Gauss-Hermite rule and field values by interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import grid as gridmod
from .errors import NonConvergenceError, NonFiniteError, OrderExceededError, SingularityError
from .generators import phi_batched
from .grid import GridSpec
from .model import FbsdeProblem

TRIGGERS = ("none", "E0", "E1", "E2")


@dataclass
class FieldStack:
    """Fields ``u^(i)`` at time ``t`` as node arrays of shape ``(G, m, n, ..., n)``."""

    t: float
    fields: list
    grid: GridSpec
    sup_norms: list = field(default_factory=list)
    lip_estimates: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.fields) - 1

    def update_diagnostics(self) -> None:
        G = self.grid.size
        self.sup_norms = [
            float(np.max(np.sqrt(np.sum(u.reshape(G, -1) ** 2, axis=1)))) for u in self.fields
        ]
        self.lip_estimates = [
            gridmod.lipschitz_estimate(self.grid, u, operator=(i == 0))
            for i, u in enumerate(self.fields)
        ]

    def derivative(self, i: int) -> np.ndarray:
        """``Du^(i)`` on the nodes: ``u^(i+1)`` below the top level, else a finite difference."""
        if i < self.k:
            return self.fields[i + 1]
        return gridmod.gradient(self.grid, self.fields[i])


@dataclass
class SingularityDiagnostics:
    t: float
    e0_margin: float
    e1: float | None
    e2: float | None
    lip0: float
    triggered: str = "none"
    s_min: float | None = None
    e2_essential: bool = True

    def to_dict(self) -> dict:
        def clean(v):
            if v is None:
                return None
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "t": self.t,
            "E0_margin": clean(self.e0_margin),
            "E1": clean(self.e1),
            "E2": clean(self.e2),
            "lip0": clean(self.lip0),
            "triggered": self.triggered,
            "sMinEstimate": self.s_min,
            "E2_essential": self.e2_essential,
        }


@dataclass
class FieldTrajectory:
    problem: FbsdeProblem
    grid: GridSpec
    k: int
    dt: float
    snapshots: list
    diagnostics: list
    status: str = "complete"
    triggered: str = "none"
    s_min: float | None = None
    message: str = ""
    quad_points: int = 5

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def interval(self) -> tuple:
        """Analogue of the maximal interval: ``(s_min, T]`` on early stop, else ``[t_end, T]``."""
        lo = self.s_min if self.s_min is not None else self.snapshots[-1].t
        return (lo, self.problem.T)


def init_terminal(problem: FbsdeProblem, grid: GridSpec, k: int) -> FieldStack:
    """``u^(i)(T, .) = xi^(i)`` on the nodes, ``i = 0..k``."""
    if k > problem.k_max - 1:
        raise OrderExceededError(f"k = {k} needs k <= k_max - 1 = {problem.k_max - 1}")
    if grid.n != problem.n:
        raise ValueError(f"grid dimension {grid.n} != problem dimension {problem.n}")
    X = grid.points()
    stack = FieldStack(problem.T, [problem.xi_derivative(i, X) for i in range(k + 1)], grid)
    stack.update_diagnostics()
    return stack


def solve_z0(problem: FbsdeProblem, du0, t, x, y, tol: float = 1e-12, max_iter: int = 200):
    """Fixed point ``z = Du^(0) sigma(t, x, y, z)`` by Picard iteration from ``z = 0``.

    ``du0`` has shape ``(N, m, n)`` (unbatched inputs are accepted). Returns
    ``(z, iterations)`` where ``iterations`` counts updates larger than ``tol``.
    """
    du0 = np.asarray(du0, dtype=float)
    single = du0.ndim == 2
    if single:
        du0, x, y = du0[None], np.asarray(x, dtype=float)[None], np.asarray(y, dtype=float)[None]
    N = du0.shape[0]
    z = np.zeros((N, problem.m, problem.d))
    for it in range(1, max_iter + 1):
        sig = problem.value("sigma", t, x, y, z)
        z_new = np.einsum("Nal,Nlj->Naj", du0, sig)
        step = float(np.max(np.sqrt(np.sum((z_new - z).reshape(N, -1) ** 2, axis=1))))
        if not math.isfinite(step):
            raise NonConvergenceError("Picard iteration for z diverged")
        z = z_new
        if step <= tol:
            # the last pass only confirms the fixed point
            return (z[0] if single else z), max(it - 1, 1)
    raise NonConvergenceError(f"Picard iteration for z did not converge in {max_iter} steps")


def quadrature(d: int, points: int):
    """Tensor Gauss-Hermite rule for a standard normal in R^d: nodes ``(Q, d)``, weights ``(Q,)``."""
    w1, a1 = hermegauss(points)
    a1 = a1 / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([w1] * d), indexing="ij")
    wts = np.meshgrid(*([a1] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wts], axis=1), axis=1)
    return nodes, weights


def _closure(problem, stack, t_next, X):
    """``(ys, zs, sigma, mu)`` at the nodes for the step that ends at ``t_next``."""
    ys = stack.fields
    z0, _ = solve_z0(problem, stack.derivative(0), t_next, X, ys[0])
    sig = problem.value("sigma", t_next, X, ys[0], z0)
    mu = problem.value("mu", t_next, X, ys[0], z0)
    zs = [z0] + [
        np.einsum("Ga...l,Glj->Gaj...", stack.derivative(i), sig) for i in range(1, stack.k + 1)
    ]
    return ys, zs, np.asarray(sig), np.asarray(mu)


def backward_step(problem: FbsdeProblem, stack: FieldStack, dt: float, quad_points: int = 5) -> FieldStack:
    """One explicit step from ``stack.t`` to ``stack.t - dt``."""
    g = stack.grid
    X = g.points()
    G = X.shape[0]
    t_next = stack.t
    ys, zs, sig, mu = _closure(problem, stack, t_next, X)
    phis = [np.asarray(phi_batched(problem, i, t_next, X, ys[: i + 1], zs[: i + 1])) for i in range(stack.k + 1)]

    if np.any(sig):
        w, a = quadrature(problem.d, quad_points)
    else:
        w, a = np.zeros((1, problem.d)), np.ones(1)
    drift = X + mu * dt
    shocks = math.sqrt(dt) * np.einsum("Glj,Qj->GQl", sig, w)
    pts = (drift[:, None, :] + shocks).reshape(-1, problem.n)

    sizes = [u[0].size for u in stack.fields]
    packed = np.concatenate([u.reshape(G, -1) for u in stack.fields], axis=1)
    vals = g.interpolate(packed, pts).reshape(G, len(a), -1)
    expect = np.einsum("GQc,Q->Gc", vals, a)

    fields = []
    off = 0
    for u, phi, s in zip(stack.fields, phis, sizes):
        fields.append(expect[:, off : off + s].reshape(u.shape) - phi * dt)
        off += s
    for i, u in enumerate(fields):
        if not np.all(np.isfinite(u)):
            raise NonFiniteError(f"u^({i}) became non-finite at t = {t_next - dt:.6g}")
    new = FieldStack(t_next - dt, fields, g)
    new.update_diagnostics()
    return new


def monitor_singularity(
    stack: FieldStack,
    L_sigma_z: float,
    lip_blowup: float = 1e3,
    e0_margin: float | None = None,
) -> SingularityDiagnostics:
    """Evaluate (E0)/(E1)/(E2) on one stack.

    E0: ``lip0 >= 1/L_sigma_z - e0_margin``; with ``L_sigma_z = 0`` the threshold
    ``1/L_sigma_z`` is infinite and E0 fires on ``lip0 >= lip_blowup`` instead.
    E1/E2 fire when the Lipschitz estimate of ``u^(1)``/``u^(2)`` reaches ``lip_blowup``.
    """
    lips = stack.lip_estimates
    lip0 = lips[0]
    if L_sigma_z > 0:
        inv = 1.0 / L_sigma_z
        margin = 1e-2 * inv if e0_margin is None else e0_margin
        e0_val = inv - lip0
        e0 = not (lip0 < inv - margin)
    else:
        e0_val = math.inf
        e0 = not (lip0 < lip_blowup)
    e1 = lips[1] if len(lips) > 1 else None
    e2 = lips[2] if len(lips) > 2 else None
    diag = SingularityDiagnostics(stack.t, e0_val, e1, e2, lip0, e2_essential=L_sigma_z > 0)
    if e0:
        diag.triggered = "E0"
    elif e1 is not None and not (e1 < lip_blowup):
        diag.triggered = "E1"
    elif e2 is not None and not (e2 < lip_blowup):
        diag.triggered = "E2"
    if diag.triggered != "none":
        diag.s_min = stack.t
    return diag


def solve(
    problem: FbsdeProblem,
    k: int,
    grid: GridSpec,
    dt: float,
    save_every: int = 1,
    quad_points: int = 5,
    lip_blowup: float = 1e3,
    e0_margin: float | None = None,
    t_end: float = 0.0,
) -> FieldTrajectory:
    """Sweep backward from ``T`` to ``t_end`` or to the first singularity trigger."""
    steps = int(round((problem.T - t_end) / dt))
    if steps < 1 or abs(steps * dt - (problem.T - t_end)) > 1e-9 * max(1.0, problem.T):
        raise ValueError(f"dt = {dt} does not divide the horizon {problem.T - t_end}")
    stack = init_terminal(problem, grid, k)
    traj = FieldTrajectory(problem, grid, k, dt, [stack], [], quad_points=quad_points)
    diag = monitor_singularity(stack, problem.L_sigma_z, lip_blowup, e0_margin)
    traj.diagnostics.append(diag)
    for j in range(1, steps + 1):
        if diag.triggered != "none":
            break
        t_new = problem.T - j * dt
        try:
            stack = backward_step(problem, stack, dt, quad_points)
            stack.t = t_new  # avoid drift from repeated subtraction
        except (SingularityError, NonConvergenceError, NonFiniteError) as exc:
            diag = SingularityDiagnostics(t_new, -math.inf, None, None, math.inf, "E0", t_new)
            traj.diagnostics.append(diag)
            traj.message = str(exc)
            break
        diag = monitor_singularity(stack, problem.L_sigma_z, lip_blowup, e0_margin)
        traj.diagnostics.append(diag)
        if j % save_every == 0 or j == steps or diag.triggered != "none":
            traj.snapshots.append(stack)
    if diag.triggered != "none":
        traj.status = "singularity"
        traj.triggered = diag.triggered
        traj.s_min = diag.s_min
    return traj


def scaling_transform(stack: FieldStack, lam: float) -> FieldStack:
    """``ubar^(i)(t, x) = lam^{-i} u^(i)(t, x / lam)`` on the lam-scaled grid."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    g = stack.grid.scaled(lam)
    out = FieldStack(stack.t, [lam ** (-i) * u for i, u in enumerate(stack.fields)], g)
    out.update_diagnostics()
    return out


def derivative_consistency(trajectory: FieldTrajectory, margin: int = 0) -> list[float]:
    """Per level ``i < k``: max over snapshots and nodes of ``|D_h u^(i) - u^(i+1)|``.

    ``margin`` excludes that many boundary layers of nodes (ignored on periodic grids).
    """
    g = trajectory.grid
    out = []
    mask = np.ones(g.nodes, dtype=bool)
    if margin and not g.periodic:
        sl = tuple(slice(margin, N - margin) for N in g.nodes)
        mask[:] = False
        mask[sl] = True
    mask = mask.ravel()
    for i in range(trajectory.k):
        worst = 0.0
        for s in trajectory.snapshots:
            D = gridmod.gradient(g, s.fields[i])
            worst = max(worst, float(np.max(np.abs(D - s.fields[i + 1])[mask])))
        out.append(worst)
    return out
