"""Monte-Carlo verification of a computed field trajectory.

Paths follow Euler-Maruyama on the snapshot times of the trajectory. Along a
path, ``Y^(i) = u^(i)(t, X_t)`` and ``Z^(i) = Du^(i) sigma`` are read from the
fields, so the decoupling condition holds by construction; the checks target
the BSDEs ``dY^(i) = phi^(i) dt + Z^(i) dW`` with ``Y^(i)_T = xi^(i)(X_T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as gridmod
from .field_solver import FieldTrajectory, derivative_consistency, solve_z0
from .generators import phi_batched

__all__ = [
    "PathBundle",
    "ResidualReport",
    "simulate_forward",
    "decoupling_residual",
    "derivative_consistency",
    "z_bound_check",
]


@dataclass
class PathBundle:
    """Per-path summaries of a simulation (full paths only with ``record=True``).

    ``residual[i]`` is ``xi^(i)(X_T) - Y^(i)_0 - sum phi^(i) dt - sum Z^(i) dW``
    per path; ``increments`` holds per-path means of ``r_j dW_j`` and
    ``r_j r_{j+1}`` for the local residuals ``r_j`` of every level.
    """

    times: np.ndarray
    x0: np.ndarray
    seed: int
    paths: int
    X_T: np.ndarray
    Y_start: list
    residual: list
    terminal_gap: list
    increments: list
    z0_max: float
    sigma0_max: float
    y1_max: float
    out_of_box: int
    X: np.ndarray | None = None
    Y: list | None = None
    Z: list | None = None


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def _level_data(traj: FieldTrajectory):
    """Per snapshot: packed node channels ``[u^(0..k), D u^(k)]`` and the split sizes."""
    out = []
    G = traj.grid.size
    for s in traj.snapshots:
        parts = list(s.fields) + [gridmod.gradient(traj.grid, s.fields[-1])]
        out.append(np.concatenate([p.reshape(G, -1) for p in parts], axis=1))
    shapes = [u.shape[1:] for u in traj.snapshots[0].fields]
    shapes.append(shapes[-1] + (traj.problem.n,))
    return out, shapes


def _unpack(vals, shapes):
    M = vals.shape[0]
    res, off = [], 0
    for sh in shapes:
        s = int(np.prod(sh))
        res.append(vals[:, off : off + s].reshape((M,) + sh))
        off += s
    return res


def simulate_forward(
    trajectory: FieldTrajectory,
    x0,
    paths: int,
    seed: int,
    block_size: int = 4096,
    record: bool = False,
) -> PathBundle:
    """Simulate ``paths`` forward paths from ``x0`` at the first saved time."""
    traj = trajectory
    problem = traj.problem
    n, m, d, k = problem.n, problem.m, problem.d, traj.k
    order = np.argsort([s.t for s in traj.snapshots])
    snaps = [traj.snapshots[i] for i in order]
    times = np.array([s.t for s in snaps])
    packed, shapes = _level_data(traj)
    packed = [packed[i] for i in order]
    g = traj.grid
    x0 = np.asarray(x0, dtype=float).reshape(n)
    steps = len(times) - 1
    lo, hi = g.lo, g.lo + g.spacing * (np.array(g.nodes) - (0 if g.periodic else 1))

    acc = {"X_T": [], "Y0": [[] for _ in range(k + 1)], "R": [[] for _ in range(k + 1)],
           "gap": [[] for _ in range(k + 1)], "inc": [[] for _ in range(k + 1)]}
    rec_X, rec_Y, rec_Z = [], [[] for _ in range(k + 1)], [[] for _ in range(k + 1)]
    z0_max = sigma0_max = y1_max = 0.0
    out_of_box = 0

    for b, start in enumerate(range(0, paths, block_size)):
        P = min(block_size, paths - start)
        rng = _rng(seed, b)
        X = np.repeat(x0[None], P, axis=0)
        R = [np.zeros((P,) + shapes[i]) for i in range(k + 1)]
        Y0 = None
        prev_r = [None] * (k + 1)
        s_rdw = [np.zeros((P,) + shapes[i] + (d,)) for i in range(k + 1)]
        s_rr = [np.zeros((P,) + shapes[i]) for i in range(k + 1)]
        left = np.zeros(P, dtype=bool)
        bX, bY, bZ = [X.copy()], [[] for _ in range(k + 1)], [[] for _ in range(k + 1)]
        Y = Z = phi = None
        for j in range(steps + 1):
            t = times[j]
            vals = _unpack(g.interpolate(packed[j], X), shapes)
            Y = vals[: k + 1]
            Du = [Y[i + 1] for i in range(k)] + [vals[k + 1]]
            if j == 0:
                Y0 = [y.copy() for y in Y]
            if record:
                for i in range(k + 1):
                    bY[i].append(Y[i])
            if j == steps:
                break
            z0, _ = solve_z0(problem, Du[0], t, X, Y[0])
            sig = np.asarray(problem.value("sigma", t, X, Y[0], z0))
            mu = np.asarray(problem.value("mu", t, X, Y[0], z0))
            sig0 = np.asarray(problem.value("sigma", t, X, Y[0], np.zeros_like(z0)))
            Z = [z0] + [np.einsum("Pa...l,Plj->Paj...", Du[i], sig) for i in range(1, k + 1)]
            phi = [np.asarray(phi_batched(problem, i, t, X, Y[: i + 1], Z[: i + 1])) for i in range(k + 1)]
            z0_max = max(z0_max, float(np.max(np.sqrt(np.sum(z0.reshape(P, -1) ** 2, axis=1)))))
            sigma0_max = max(sigma0_max, float(np.max(np.sqrt(np.sum(sig0.reshape(P, -1) ** 2, axis=1)))))
            if k >= 1:
                y1_max = max(y1_max, float(np.max(np.abs(Y[1]))))
            if record:
                for i in range(k + 1):
                    bZ[i].append(Z[i])
            dt = times[j + 1] - t
            dW = math.sqrt(dt) * rng.standard_normal((P, d))
            X_new = X + mu * dt + np.einsum("Plj,Pj->Pl", sig, dW)
            if not g.periodic:
                left |= np.any((X_new < lo) | (X_new > hi), axis=1)
            nxt = _unpack(g.interpolate(packed[j + 1], X_new), shapes)
            for i in range(k + 1):
                zdw = np.einsum("Paj...,Pj->Pa...", Z[i], dW)
                r = nxt[i] - Y[i] - phi[i] * dt - zdw
                R[i] += phi[i] * dt + zdw
                s_rdw[i] += r[..., None] * dW.reshape((P,) + (1,) * len(shapes[i]) + (d,)) / dt
                if prev_r[i] is not None:
                    s_rr[i] += prev_r[i] * r / dt
                prev_r[i] = r
            X = X_new
            if record:
                bX.append(X.copy())
        xi_T = [np.asarray(problem.xi_derivative(i, X)) for i in range(k + 1)]
        for i in range(k + 1):
            acc["R"][i].append(xi_T[i] - Y0[i] - R[i])
            acc["Y0"][i].append(Y0[i])
            acc["gap"][i].append(np.abs(Y[i] - xi_T[i]).reshape(P, -1).max(axis=1))
            acc["inc"][i].append(
                (s_rdw[i].reshape(P, -1) / max(steps, 1), s_rr[i].reshape(P, -1) / max(steps - 1, 1))
            )
        acc["X_T"].append(X)
        out_of_box += int(np.sum(left))
        if record:
            rec_X.append(np.stack(bX, axis=1))
            for i in range(k + 1):
                rec_Y[i].append(np.stack(bY[i], axis=1))
                rec_Z[i].append(np.stack(bZ[i], axis=1) if bZ[i] else None)

    cat = lambda lst: np.concatenate(lst, axis=0)
    bundle = PathBundle(
        times=times,
        x0=x0,
        seed=seed,
        paths=paths,
        X_T=cat(acc["X_T"]),
        Y_start=[cat(v) for v in acc["Y0"]],
        residual=[cat(v) for v in acc["R"]],
        terminal_gap=[cat(v) for v in acc["gap"]],
        increments=[(cat([a for a, _ in v]), cat([c for _, c in v])) for v in acc["inc"]],
        z0_max=z0_max,
        sigma0_max=sigma0_max,
        y1_max=y1_max,
        out_of_box=out_of_box,
    )
    if record:
        bundle.X = cat(rec_X)
        bundle.Y = [cat(v) for v in rec_Y]
        bundle.Z = [cat(v) if v[0] is not None else None for v in rec_Z]
    return bundle


def _stats(samples: np.ndarray) -> tuple[float, float]:
    """Mean and standard error with order-independent compensated sums."""
    P = samples.shape[0]
    mean = math.fsum(samples) / P
    var = math.fsum((samples - mean) ** 2) / max(P - 1, 1)
    return mean, math.sqrt(var / P)


@dataclass
class LevelResidual:
    level: int
    mean: float
    se: float
    max_abs: float
    rms: float
    within_3se: bool
    terminal_gap: float
    max_abs_tstat: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ResidualReport:
    paths: int
    seed: int
    levels: list
    decoupling_max: float
    z_bound_margin: float | None
    out_of_box: int
    regime_note: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "paths": self.paths,
            "seed": self.seed,
            "levels": [lv.to_dict() for lv in self.levels],
            "decoupling_max": self.decoupling_max,
            "z_bound_margin": self.z_bound_margin,
            "out_of_box": self.out_of_box,
            "regime_note": self.regime_note,
            "notes": self.notes,
        }


def decoupling_residual(bundle: PathBundle, trajectory: FieldTrajectory) -> ResidualReport:
    """BSDE residual statistics per level (worst component reported)."""
    levels = []
    for i, R in enumerate(bundle.residual):
        flat = R.reshape(R.shape[0], -1)
        best = None
        for c in range(flat.shape[1]):
            mean, se = _stats(flat[:, c])
            if best is None or abs(mean) > abs(best[0]):
                best = (mean, se)
        mean, se = best
        tstats = []
        for arr in bundle.increments[i]:
            for c in range(arr.shape[1]):
                mu, s = _stats(arr[:, c])
                tstats.append(abs(mu) / s if s > 0 else (0.0 if mu == 0 else math.inf))
        levels.append(
            LevelResidual(
                level=i,
                mean=mean,
                se=se,
                max_abs=float(np.max(np.abs(flat))),
                rms=math.sqrt(math.fsum((flat**2).ravel()) / flat.size),
                within_3se=abs(mean) <= 3 * se + 1e-15,
                terminal_gap=float(np.max(bundle.terminal_gap[i])),
                max_abs_tstat=max(tstats) if tstats else 0.0,
            )
        )
    problem = trajectory.problem
    regime = ""
    if problem.L_sigma_z > 0 and not (problem.n == 1 and problem.m == 1):
        regime = "L_sigma_z > 0 with (n, m) != (1, 1): level-1 check outside the guaranteed regime"
    zb = z_bound_check(bundle, trajectory)
    notes = []
    if bundle.out_of_box:
        notes.append(f"{bundle.out_of_box} paths left the grid box (boundary policy applied)")
    return ResidualReport(
        paths=bundle.paths,
        seed=bundle.seed,
        levels=levels,
        decoupling_max=0.0,
        z_bound_margin=zb["margin"],
        out_of_box=bundle.out_of_box,
        regime_note=regime,
        notes=notes,
    )


def measured_lipschitz(trajectory: FieldTrajectory) -> float:
    """``L_hat``: max over snapshots of the u^(0) slope and, if present, sup |u^(1)|."""
    best = 0.0
    for s in trajectory.snapshots:
        best = max(best, s.lip_estimates[0])
        if s.k >= 1:
            best = max(best, s.sup_norms[1])
    return best


def z_bound_check(bundle: PathBundle, trajectory: FieldTrajectory) -> dict:
    """``|Z^(0)| <= L_hat |sigma(., X, Y, 0)| / (1 - L_hat L_sigma_z)`` along the paths."""
    L = trajectory.problem.L_sigma_z
    L_hat = measured_lipschitz(trajectory)
    if L_hat * L >= 1:
        return {"L_hat": L_hat, "bound": math.inf, "z0_max": bundle.z0_max, "margin": None, "holds": False}
    bound = L_hat * bundle.sigma0_max / (1.0 - L_hat * L)
    margin = bound - bundle.z0_max
    return {
        "L_hat": L_hat,
        "bound": bound,
        "z0_max": bundle.z0_max,
        "margin": margin,
        "holds": margin >= -1e-9 * max(1.0, bound),
    }
