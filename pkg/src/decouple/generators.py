"""Generators h^(k), phi^(k) of the derivative-field BSDE hierarchy.

For ``theta_k = (t, x, y^(0), z^(0), ..., y^(k), z^(k))`` with
``y^(i)`` of shape ``(m, n, ..., n)`` and ``z^(i)`` of shape ``(m, d, n, ..., n)``
(``i`` trailing n-axes each), the generators are

    h^(1)   = (Id - y^(1) sigma_z)^{-1} (y^(1) sigma_x + y^(1) sigma_y y^(1) + z^(1))
    h^(k,j) = z^(k,j) + y^(k) B_j,          B = sigma_x + sigma_y y^(1) + sigma_z h^(1)
    phi^(0) = f
    phi^(k) = D_theta phi^(k-1)[...]  - y^(k) A - sum_j z^(k,j) B_j,
              A = mu_x + mu_y y^(1) + mu_z h^(1)

where ``D_theta phi^(k-1)`` is the total derivative along the direction that moves
``x`` by ``e_q``, ``y^(i)`` by ``y^(i+1)[..., q]`` and ``z^(i)`` by ``h^(i+1)[..., q]``;
``q`` becomes the new trailing axis. Coefficients are evaluated at
``(t, x, y^(0), z^(0))``.

All internal functions take a leading batch axis and accept nested duals, which
is how the directional derivatives inside the recursion are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .errors import OrderExceededError, ShapeMismatchError, SingularityError
from .model import FbsdeProblem
from .tensor import operator_norm


@dataclass(frozen=True)
class ThetaPoint:
    """A point of Theta_k, optionally batched along a leading axis of ``x``."""

    t: float
    x: np.ndarray
    y: tuple
    z: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", tuple(np.asarray(v, dtype=float) for v in self.y))
        object.__setattr__(self, "z", tuple(np.asarray(v, dtype=float) for v in self.z))
        if len(self.y) != len(self.z) or not self.y:
            raise ShapeMismatchError("theta needs matching, nonempty y and z lists")

    @property
    def k(self) -> int:
        return len(self.y) - 1

    @property
    def batched(self) -> bool:
        return self.x.ndim == 2

    def validate(self, problem: FbsdeProblem) -> None:
        n, m, d = problem.n, problem.m, problem.d
        lead = self.x.shape[:-1]
        if self.x.shape[-1] != n:
            raise ShapeMismatchError(f"x has shape {self.x.shape}, expected trailing {n}")
        for i, (yi, zi) in enumerate(zip(self.y, self.z)):
            if yi.shape != lead + (m,) + (n,) * i:
                raise ShapeMismatchError(f"y^({i}) has shape {yi.shape}")
            if zi.shape != lead + (m, d) + (n,) * i:
                raise ShapeMismatchError(f"z^({i}) has shape {zi.shape}")
        if self.k >= 1 and problem.L_sigma_z > 0:
            y1 = self.y[1].reshape((-1, m, n))
            worst = max(operator_norm(a, out_axes=1) for a in y1)
            if worst * problem.L_sigma_z >= 1:
                raise SingularityError(
                    f"|y^(1)|_op * L_sigma_z = {worst * problem.L_sigma_z:.4g} >= 1"
                )

    def arrays(self):
        """Batched ``(x, ys, zs)`` plus whether a batch axis was added."""
        if self.batched:
            return self.x, list(self.y), list(self.z), False
        return self.x[None], [v[None] for v in self.y], [v[None] for v in self.z], True


@dataclass
class GeneratorValue:
    h: list = field(default_factory=list)
    phi: list = field(default_factory=list)


@dataclass
class Transport:
    """First-order coefficient data shared by every level at one theta."""

    h1: object
    A: object  # (N, n, n)
    B: object  # (N, n, d, n)
    f_x: object
    f_y: object
    f_z: object


def transport(problem: FbsdeProblem, t, x, y0, z0, y1, z1) -> Transport:
    """h^(1) and the transport maps A, B at a batched (possibly dual) theta_1."""
    n, m, d = problem.n, problem.m, problem.d
    mu_x, mu_y, mu_z = problem.first_order("mu", t, x, y0, z0)
    s_x, s_y, s_z = problem.first_order("sigma", t, x, y0, z0)
    f_x, f_y, f_z = problem.first_order("f", t, x, y0, z0)
    N = dual.shape_of(x)[0]

    M = dual.tdot(y1, s_z)  # (N, m, d, m, d)
    Mp = np.asarray(dual.primal(M)).reshape(N, m * d, m * d)
    coupled = not _all_zero(M)
    if coupled:
        norms = np.linalg.norm(Mp, ord=2, axis=(1, 2))
        if np.max(norms) >= 1.0:
            raise SingularityError(
                f"|y^(1) sigma_z|_op = {np.max(norms):.6g} >= 1: Id - y^(1) sigma_z not invertible"
            )
    Bxy = dual.add(s_x, dual.tdot(s_y, y1))  # (N, n, d, n)
    rhs = dual.add(dual.tdot(y1, Bxy), z1)  # (N, m, d, n)
    if coupled:
        eye = np.broadcast_to(np.eye(m * d), (N, m * d, m * d))
        S = dual.add(eye, -dual.apply_linear(lambda a: a.reshape(N, m * d, m * d), M))
        h1 = dual.solve(S, dual.apply_linear(lambda a: a.reshape(N, m * d, n), rhs))
        h1 = dual.apply_linear(lambda a: a.reshape(N, m, d, n), h1)
    else:
        h1 = rhs
    B = dual.add(Bxy, dual.tdot(s_z, h1, 2))
    A = dual.add(dual.add(mu_x, dual.tdot(mu_y, y1)), dual.tdot(mu_z, h1, 2))
    return Transport(h1, A, B, f_x, f_y, f_z)


def _all_zero(a) -> bool:
    if isinstance(a, dual.Dual):
        return _all_zero(a.re) and _all_zero(a.du)
    return not np.any(a)


def _hk(yk, zk, B):
    # h^(k)[a, j, ..., c] = z^(k)[a, j, ..., c] + sum_l y^(k)[a, ..., l] B[l, j, c]
    return dual.add(zk, dual.einsum("Na...l,Nljc->Naj...c", yk, B))


def _transport_term(yk, zk, A, B):
    # y^(k) A + sum_j z^(k,j) B_j, contracted on the trailing axis
    ya = dual.tdot(yk, A)
    zb = dual.einsum("Naj...l,Nljc->Na...c", zk, B)
    return dual.add(ya, zb)


def phi_batched(problem: FbsdeProblem, k: int, t, x, ys, zs):
    """phi^(k) on a batch; ``ys``/``zs`` hold levels 0..k (duals allowed)."""
    if k == 0:
        return problem.value("f", t, x, ys[0], zs[0])
    tr = transport(problem, t, x, ys[0], zs[0], ys[1], zs[1])
    hs = [None, tr.h1] + [_hk(ys[i], zs[i], tr.B) for i in range(2, k + 1)]
    N, n = dual.shape_of(x)
    cols = []
    for q in range(n):
        tag = dual.new_tag()
        e = np.zeros((N, n))
        e[:, q] = 1.0
        xd = dual.Dual(x, e, tag)
        yd = [dual.Dual(ys[i], ys[i + 1][..., q], tag) for i in range(k)]
        zd = [dual.Dual(zs[i], hs[i + 1][..., q], tag) for i in range(k)]
        cols.append(dual.tangent(phi_batched(problem, k - 1, t, xd, yd, zd), tag))
    D = dual.stack(cols, axis=-1)
    return dual.add(D, -_transport_term(ys[k], zs[k], tr.A, tr.B))


def _check_order(problem, k):
    if k > problem.k_max:
        raise OrderExceededError(f"phi^({k}) needs derivatives of order {k} > k_max {problem.k_max}")


def _out(val, squeeze):
    val = np.asarray(val)
    return val[0] if squeeze else val


def eval_h1(problem: FbsdeProblem, theta: ThetaPoint) -> np.ndarray:
    x, ys, zs, sq = theta.arrays()
    tr = transport(problem, theta.t, x, ys[0], zs[0], ys[1], zs[1])
    return _out(tr.h1, sq)


def eval_hk(problem: FbsdeProblem, theta: ThetaPoint, k: int) -> np.ndarray:
    if k < 1 or k > theta.k:
        raise ValueError(f"need 1 <= k <= {theta.k}")
    x, ys, zs, sq = theta.arrays()
    tr = transport(problem, theta.t, x, ys[0], zs[0], ys[1], zs[1])
    return _out(tr.h1 if k == 1 else _hk(ys[k], zs[k], tr.B), sq)


def eval_phi1(problem: FbsdeProblem, theta: ThetaPoint) -> np.ndarray:
    """phi^(1) from the explicit first-order formula (independent of the recursion)."""
    _check_order(problem, 1)
    x, ys, zs, sq = theta.arrays()
    tr = transport(problem, theta.t, x, ys[0], zs[0], ys[1], zs[1])
    val = tr.f_x + dual.tdot(tr.f_y, ys[1]) + dual.tdot(tr.f_z, tr.h1, 2)
    return _out(val - _transport_term(ys[1], zs[1], tr.A, tr.B), sq)


def eval_phik(problem: FbsdeProblem, theta: ThetaPoint, k: int) -> np.ndarray:
    """phi^(k) through the recursion; result shape ``(m, n, ..., n)``."""
    if k < 0 or k > theta.k:
        raise ValueError(f"need 0 <= k <= {theta.k}")
    _check_order(problem, k)
    x, ys, zs, sq = theta.arrays()
    return _out(phi_batched(problem, k, theta.t, x, ys[: k + 1], zs[: k + 1]), sq)


def eval_generators(problem: FbsdeProblem, theta: ThetaPoint) -> GeneratorValue:
    out = GeneratorValue()
    for i in range(theta.k + 1):
        out.phi.append(eval_phik(problem, theta, i))
        if i:
            out.h.append(eval_hk(problem, theta, i))
    return out


def random_theta(problem: FbsdeProblem, k: int, rng, batch: int, scale: float = 0.5, y1_margin: float = 0.5):
    """Random batched theta_k with |y^(1)|_op * L_sigma_z <= y1_margin."""
    n, m, d = problem.n, problem.m, problem.d
    x = rng.uniform(-1.0, 1.0, size=(batch, n))
    ys = [scale * rng.standard_normal((batch, m) + (n,) * i) for i in range(k + 1)]
    zs = [scale * rng.standard_normal((batch, m, d) + (n,) * i) for i in range(k + 1)]
    if k >= 1 and problem.L_sigma_z > 0:
        norms = np.linalg.norm(ys[1], ord=2, axis=(1, 2))
        cap = y1_margin / problem.L_sigma_z
        ys[1] = ys[1] * np.minimum(1.0, cap / np.maximum(norms, 1e-300))[:, None, None]
    return ThetaPoint(problem.T * rng.uniform(), x, tuple(ys), tuple(zs))


def jacobian_wrt(problem: FbsdeProblem, k: int, theta: ThetaPoint, level: int) -> np.ndarray:
    """d phi^(k) / d z^(level) at a batched theta, shape ``(N, *phi_shape, *z_shape)``."""
    x, ys, zs, _ = theta.arrays()
    N = x.shape[0]
    zshape = zs[level].shape[1:]
    P = int(np.prod(zshape))
    rep = lambda a: np.repeat(a, P, axis=0)
    xr = rep(x)
    yr = [rep(v) for v in ys[: k + 1]]
    zr = [rep(v) for v in zs[: k + 1]]
    tag = dual.new_tag()
    seed = np.tile(np.eye(P), (N, 1)).reshape((N * P,) + zshape)
    zr[level] = dual.Dual(zr[level], seed, tag)
    val = dual.tangent(phi_batched(problem, k, theta.t, xr, yr, zr), tag)
    val = np.asarray(val).reshape((N, P) + val.shape[1:])
    return np.moveaxis(val, 1, -1).reshape((N,) + val.shape[2:] + zshape)


@dataclass
class StructuralReport:
    k: int
    trials: int
    deviation_a: float
    deviation_b: float | None
    perturbed_a: list[str]

    def passes(self, tol: float = 1e-10) -> bool:
        return self.deviation_a <= tol and (self.deviation_b is None or self.deviation_b <= tol)


def check_structural_dependence(
    problem: FbsdeProblem, k: int, trials: int = 20, seed: int = 0, scale: float = 0.5
) -> StructuralReport:
    """Check that d phi^(k)/d z^(k) depends on theta_1 only (theta_1 minus z^(1) when
    ``L_sigma_z = 0``), and that d phi^(k)/d z^(k-1) does not depend on z^(k)
    for ``k >= 3`` (``k >= 2`` when ``L_sigma_z = 0``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_order(problem, k + 1)
    rng = np.random.default_rng(seed)
    base = random_theta(problem, k, rng, trials, scale)
    x, ys, zs, _ = base.arrays()
    coupled = problem.L_sigma_z > 0

    ys_a = list(ys)
    zs_a = list(zs)
    labels = []
    for i in range(2, k + 1):
        ys_a[i] = ys[i] + scale * rng.standard_normal(ys[i].shape)
        zs_a[i] = zs[i] + scale * rng.standard_normal(zs[i].shape)
        labels += [f"y{i}", f"z{i}"]
    if not coupled and k >= 1:
        zs_a[1] = zs[1] + scale * rng.standard_normal(zs[1].shape)
        labels.insert(0, "z1")
    pert = ThetaPoint(base.t, x, tuple(ys_a), tuple(zs_a))
    J0 = jacobian_wrt(problem, k, base, k)
    J1 = jacobian_wrt(problem, k, pert, k)
    dev_a = float(np.max(np.abs(J0 - J1)))

    dev_b = None
    if k >= (2 if not coupled else 3):
        zs_b = list(zs)
        zs_b[k] = zs[k] + scale * rng.standard_normal(zs[k].shape)
        pert_b = ThetaPoint(base.t, x, tuple(ys), tuple(zs_b))
        K0 = jacobian_wrt(problem, k, base, k - 1)
        K1 = jacobian_wrt(problem, k, pert_b, k - 1)
        dev_b = float(np.max(np.abs(K0 - K1)))
    return StructuralReport(k, trials, dev_a, dev_b, labels)
