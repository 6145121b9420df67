"""FBSDE problem definitions: coefficients with derivatives and their validation.

Coefficients act on the packed argument ``w = (x, y, vec(z))`` of length
``p = n + m + m*d`` (``xi`` acts on ``x`` alone). The order-``r`` derivative of
a coefficient with value shape ``S`` is an array of shape ``(N, *S, p, ..., p)``
with ``r`` trailing axes, ``N`` being the batch axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from . import dual
from .errors import NonFiniteError, OrderExceededError, ShapeMismatchError
from .tensor import operator_norm


def make_symbols(n: int, m: int, d: int):
    """Sympy symbols ``t, x1..xn, y1..ym, z11..zmd`` (z as an m x d nested list)."""
    t = sp.Symbol("t", real=True)
    x = [sp.Symbol(f"x{i + 1}", real=True) for i in range(n)]
    y = [sp.Symbol(f"y{i + 1}", real=True) for i in range(m)]
    z = [[sp.Symbol(f"z{a + 1}{j + 1}", real=True) for j in range(d)] for a in range(m)]
    return t, x, y, z


class Coefficient:
    """A coefficient map with derivatives w.r.t. its packed argument."""

    shape: tuple[int, ...]
    p: int
    name: str
    source: str

    def derivative(self, order: int, t: float, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transformed(self, x_dims: int, x_scale: float, factor: float) -> "Coefficient":
        """Coefficient ``w -> factor * F(t, x / x_scale, y, z)`` (x = first ``x_dims`` slots)."""
        raise NotImplementedError

    def _check(self, out):
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"coefficient {self.name!r} returned non-finite values")
        return out


class SymbolicCoefficient(Coefficient):
    """Coefficient given by sympy expressions; derivatives are exact."""

    source = "analytic"

    def __init__(self, name, exprs, args, t_symbol, shape):
        self.name = name
        self.exprs = [sp.sympify(e) for e in exprs]
        self.args = list(args)
        self.t_symbol = t_symbol
        self.shape = tuple(shape)
        self.p = len(self.args)
        if len(self.exprs) != int(np.prod(self.shape, dtype=np.int64)):
            raise ShapeMismatchError(f"{name}: {len(self.exprs)} entries for shape {self.shape}")
        self._compiled: dict[int, tuple] = {}

    def _compile(self, order):
        p = self.p
        unique: dict[tuple, int] = {}
        exprs: list = []
        positions: list[list[int]] = []
        size = p**order
        for o, e in enumerate(self.exprs):
            cache: dict[tuple, sp.Expr] = {}
            for combo in itertools.combinations_with_replacement(range(p), order):
                cache[combo] = sp.diff(e, *[self.args[i] for i in combo]) if order else e
            for multi in itertools.product(range(p), repeat=order):
                expr = cache[tuple(sorted(multi))]
                if expr == 0:
                    continue
                flat = o * size + (int(np.ravel_multi_index(multi, (p,) * order)) if order else 0)
                key = (o, tuple(sorted(multi)))
                if key not in unique:
                    unique[key] = len(exprs)
                    exprs.append(expr)
                    positions.append([])
                positions[unique[key]].append(flat)
        consts = [float(e) if e.is_number else None for e in exprs]
        dyn = [i for i, c in enumerate(consts) if c is None]
        fn = None
        if dyn:
            fn = sp.lambdify([self.t_symbol, *self.args], [exprs[i] for i in dyn], "numpy")
        return exprs, [np.asarray(pp) for pp in positions], consts, dyn, fn

    def derivative(self, order, t, w):
        if order not in self._compiled:
            self._compiled[order] = self._compile(order)
        _, positions, consts, dyn, fn = self._compiled[order]
        w = np.asarray(w, dtype=float)
        N = w.shape[0]
        out = np.zeros((N, int(np.prod(self.shape, dtype=np.int64)) * self.p**order))
        for i, c in enumerate(consts):
            if c is not None:
                out[:, positions[i]] = c
        if fn is not None:
            vals = fn(float(t), *(w[:, i] for i in range(self.p)))
            for i, v in zip(dyn, vals):
                out[:, positions[i]] = np.asarray(v, dtype=float).reshape(-1, 1)
        return self._check(out.reshape((N, *self.shape) + (self.p,) * order))

    def transformed(self, x_dims, x_scale, factor):
        subs = {self.args[i]: self.args[i] / x_scale for i in range(x_dims)}
        exprs = [factor * e.xreplace(subs) for e in self.exprs]
        return SymbolicCoefficient(self.name, exprs, self.args, self.t_symbol, self.shape)


class FiniteDifferenceCoefficient(Coefficient):
    """Coefficient given as a plain callable ``fn(t, w) -> (N, *shape)``.

    Derivatives are nested central differences with step ``step``; results carry
    truncation error O(step^2) per order and are flagged in reports.
    """

    source = "finite_difference"

    def __init__(self, name, fn: Callable, shape, p: int, step: float = 1e-3):
        self.name = name
        self.fn = fn
        self.shape = tuple(shape)
        self.p = p
        self.step = step

    def derivative(self, order, t, w):
        w = np.asarray(w, dtype=float)
        if order == 0:
            out = np.asarray(self.fn(t, w), dtype=float).reshape((w.shape[0], *self.shape))
            return self._check(out)
        cols = []
        for i in range(self.p):
            e = np.zeros(self.p)
            e[i] = self.step
            cols.append(
                (self.derivative(order - 1, t, w + e) - self.derivative(order - 1, t, w - e))
                / (2 * self.step)
            )
        return np.stack(cols, axis=-1)

    def transformed(self, x_dims, x_scale, factor):
        fn = self.fn

        def scaled(t, w):
            w = np.array(w, dtype=float)
            w[:, :x_dims] /= x_scale
            return factor * np.asarray(fn(t, w), dtype=float)

        return FiniteDifferenceCoefficient(self.name, scaled, self.shape, self.p, self.step)


def coefficient_tensor(coef: Coefficient, order: int, t: float, w, max_order: int):
    """Order-``order`` derivative tensor at a (possibly dual) packed argument.

    A dual argument ``w = a + eps b`` yields ``D^r F(a) + eps D^{r+1} F(a)[b]``,
    recursively through nested tags.
    """
    if order > max_order:
        raise OrderExceededError(
            f"{coef.name}: derivative of order {order} requested, problem supports {max_order}"
        )
    if not isinstance(w, dual.Dual):
        return coef.derivative(order, t, w)
    base = coefficient_tensor(coef, order, t, w.re, max_order)
    nxt = coefficient_tensor(coef, order + 1, t, w.re, max_order)
    return dual.Dual(base, dual.einsum("Z...p,Zp->Z...", nxt, w.du), w.tag)


@dataclass(frozen=True)
class FbsdeProblem:
    """Markovian FBSDE with deterministic coefficients.

    ``mu: (t,x,y,z) -> R^n``, ``sigma -> R^{n x d}``, ``f -> R^m``, ``xi: x -> R^m``.
    ``exact``, when known, maps ``(level, t, x[N, n]) -> u^(level)`` of shape
    ``(N, m, n, ..., n)``.
    """

    name: str
    n: int
    m: int
    d: int
    T: float
    mu: Coefficient
    sigma: Coefficient
    f: Coefficient
    xi: Coefficient
    L_sigma_z: float = 0.0
    k_max: int = 4
    exact: Callable | None = None
    params: dict = field(default_factory=dict)
    hints: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.p
        expected = {
            "mu": ((self.n,), p),
            "sigma": ((self.n, self.d), p),
            "f": ((self.m,), p),
            "xi": ((self.m,), self.n),
        }
        for key, (shape, pp) in expected.items():
            c = getattr(self, key)
            if tuple(c.shape) != shape or c.p != pp:
                raise ShapeMismatchError(
                    f"{key}: expected shape {shape} on {pp} arguments, got {c.shape} on {c.p}"
                )

    @property
    def p(self) -> int:
        return self.n + self.m + self.m * self.d

    @property
    def derivative_source(self) -> str:
        srcs = {c.source for c in (self.mu, self.sigma, self.f, self.xi)}
        return "analytic" if srcs == {"analytic"} else "finite_difference"

    def arg_labels(self) -> list[str]:
        return (
            [f"x{i + 1}" for i in range(self.n)]
            + [f"y{i + 1}" for i in range(self.m)]
            + [f"z{a + 1}{j + 1}" for a in range(self.m) for j in range(self.d)]
        )

    def pack(self, x, y, z):
        N = dual.shape_of(x)[0]
        zf = dual.apply_linear(lambda a: a.reshape(N, self.m * self.d), z)
        return dual.concatenate([x, y, zf], axis=1)

    def tensor(self, name: str, order: int, t: float, w):
        return coefficient_tensor(getattr(self, name), order, t, w, self.k_max)

    def value(self, name, t, x, y, z):
        return self.tensor(name, 0, t, self.pack(x, y, z))

    def first_order(self, name, t, x, y, z):
        """``(F_x, F_y, F_z)`` at a batch of points; F_z has trailing axes (m, d)."""
        D = self.tensor(name, 1, t, self.pack(x, y, z))
        n, m, d = self.n, self.m, self.d
        Fx = D[..., :n]
        Fy = D[..., n : n + m]
        lead = dual.shape_of(D)[:-1]
        Fz = dual.apply_linear(lambda a: a[..., n + m :].reshape(*lead, m, d), D)
        return Fx, Fy, Fz

    def xi_derivative(self, order: int, x) -> np.ndarray:
        return coefficient_tensor(self.xi, order, self.T, x, self.k_max)

    def scaled(self, lam: float) -> "FbsdeProblem":
        """Problem of the lambda-transformation: xi(x/lam), lam*(mu, sigma)(t, x/lam, y, z), f(t, x/lam, y, z)."""
        n = self.n
        exact = None
        if self.exact is not None:
            base = self.exact

            def exact(level, t, x):
                return lam ** (-level) * base(level, t, np.asarray(x) / lam)

        hints = dict(self.hints)
        if "box" in hints:
            hints["box"] = [(lam * lo, lam * hi) for lo, hi in hints["box"]]
        return FbsdeProblem(
            name=f"{self.name}@lambda={lam:g}",
            n=n,
            m=self.m,
            d=self.d,
            T=self.T,
            mu=self.mu.transformed(n, lam, lam),
            sigma=self.sigma.transformed(n, lam, lam),
            f=self.f.transformed(n, lam, 1.0),
            xi=self.xi.transformed(n, lam, 1.0),
            L_sigma_z=lam * self.L_sigma_z,
            k_max=self.k_max,
            exact=exact,
            params={**self.params, "lambda": lam},
            hints=hints,
        )

    @classmethod
    def from_sympy(
        cls, name, n, m, d, T, mu, sigma, f, xi, symbols, L_sigma_z=0.0, k_max=4, **kw
    ):
        """Build a problem from sympy expressions in the symbols of :func:`make_symbols`."""
        t, x, y, z = symbols
        args = [*x, *y, *[zz for row in z for zz in row]]
        sig = [e for row in sigma for e in row]
        return cls(
            name=name,
            n=n,
            m=m,
            d=d,
            T=float(T),
            mu=SymbolicCoefficient("mu", mu, args, t, (n,)),
            sigma=SymbolicCoefficient("sigma", sig, args, t, (n, d)),
            f=SymbolicCoefficient("f", f, args, t, (m,)),
            xi=SymbolicCoefficient("xi", xi, x, t, (m,)),
            L_sigma_z=float(L_sigma_z),
            k_max=k_max,
            **kw,
        )


@dataclass
class DerivativeBundle:
    """Coefficient values and partials at one point ``(t, x, y, z)``.

    ``tensors[name][r]`` is the full order-``r`` derivative w.r.t. the packed
    argument; ``labels`` names each of the ``p`` argument slots. Use
    :meth:`partial` for the (x, y, z)-blocks in the layout consumed by the
    generators, e.g. ``partial("sigma", "z")`` has shape ``(n, d, m, d)``.
    """

    n: int
    m: int
    d: int
    tensors: dict[str, list[np.ndarray]]
    labels: list[str]

    def partial(self, name: str, *args: str) -> np.ndarray:
        T = self.tensors[name][len(args)]
        n, m, d = self.n, self.m, self.d
        slices = {"x": slice(0, n), "y": slice(n, n + m), "z": slice(n + m, n + m + m * d)}
        out_rank = T.ndim - len(args)
        for k, a in enumerate(args):
            idx = [slice(None)] * T.ndim
            idx[out_rank + k] = slices[a]
            T = T[tuple(idx)]
        # expand every z-axis into an (m, d) pair
        shape: list[int] = list(T.shape[:out_rank])
        for a in args:
            shape += [m, d] if a == "z" else [n if a == "x" else m]
        return T.reshape(shape)


def evaluate_coefficients(problem: FbsdeProblem, t, x, y, z, order: int) -> DerivativeBundle:
    """Values and derivatives up to ``order`` of mu, sigma, f (and xi in x) at one point."""
    if order > problem.k_max:
        raise OrderExceededError(f"order {order} > k_max {problem.k_max}")
    x = np.asarray(x, dtype=float).reshape(1, problem.n)
    y = np.asarray(y, dtype=float).reshape(1, problem.m)
    z = np.asarray(z, dtype=float).reshape(1, problem.m, problem.d)
    w = problem.pack(x, y, z)
    tensors = {
        name: [problem.tensor(name, r, t, w)[0] for r in range(order + 1)]
        for name in ("mu", "sigma", "f")
    }
    tensors["xi"] = [problem.xi_derivative(r, x)[0] for r in range(order + 1)]
    return DerivativeBundle(problem.n, problem.m, problem.d, tensors, problem.arg_labels())


@dataclass
class MllcReport:
    k: int
    passes: bool
    lipschitz: dict[str, list[float]]
    divergent: list[tuple[str, int]]
    L_xi_x: float
    L_sigma_z: float
    L_sigma_z_estimate: float
    margin: float
    derivative_source: str
    notes: list[str] = field(default_factory=list)


def _line_slopes(fn, base, axis, lo, hi, points):
    grid = np.linspace(lo, hi, points)
    W = np.repeat(base[None, :], points, axis=0)
    W[:, axis] = grid
    vals = fn(W).reshape(points, -1)
    diffs = np.linalg.norm(np.diff(vals, axis=0), axis=1)
    return float(np.max(diffs) / (grid[1] - grid[0]))


def validate_mllc(
    problem: FbsdeProblem,
    k: int,
    probe_box,
    samples: int = 200,
    y_radius: float = 1.0,
    z_radius: float = 1.0,
    seed: int = 0,
    lattice: int = 65,
) -> MllcReport:
    """Sampled Lipschitz diagnostics for (k-MLLC) on ``probe_box x y-box x z-box``.

    For every coefficient and every derivative order ``r <= k``, the Lipschitz
    constant of ``D^r F`` is estimated from random difference quotients and from
    slopes along coordinate lattices through the box centre and random points. A
    lattice slope that keeps growing under refinement (ratio > 1.5) marks a kink:
    the order-``r`` derivative is then not Lipschitz. Diagnostic only.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = np.random.default_rng(seed)
    box = np.asarray(probe_box, dtype=float).reshape(problem.n, 2)
    lo_x, hi_x = box[:, 0], box[:, 1]
    if np.any(hi_x <= lo_x):
        raise ValueError("probe box must be nonempty")
    p = problem.p
    lo = np.concatenate([lo_x, -y_radius * np.ones(problem.m), -z_radius * np.ones(p - problem.n - problem.m)])
    hi = np.concatenate([hi_x, y_radius * np.ones(problem.m), z_radius * np.ones(p - problem.n - problem.m)])
    t_mid = 0.5 * problem.T

    lipschitz: dict[str, list[float]] = {}
    divergent: list[tuple[str, int]] = []
    notes: list[str] = []
    if problem.derivative_source != "analytic":
        notes.append("derivatives from finite differences")

    for name in ("mu", "sigma", "f", "xi"):
        is_xi = name == "xi"
        a_lo, a_hi = (lo_x, hi_x) if is_xi else (lo, hi)
        dim = len(a_lo)
        lipschitz[name] = []
        for r in range(k + 1):
            if is_xi:
                fn = lambda W, r=r: problem.xi_derivative(r, W)
            else:
                fn = lambda W, r=r, name=name: problem.tensor(name, r, t_mid, W)
            A = rng.uniform(a_lo, a_hi, size=(samples, dim))
            B = rng.uniform(a_lo, a_hi, size=(samples, dim))
            FA = fn(A).reshape(samples, -1)
            FB = fn(B).reshape(samples, -1)
            dist = np.linalg.norm(A - B, axis=1)
            est = float(np.max(np.linalg.norm(FA - FB, axis=1) / np.maximum(dist, 1e-300)))
            bases = np.vstack([0.5 * (a_lo + a_hi), A[: min(8, samples)]])
            coarse = fine = 0.0
            for base in bases:
                for ax in range(dim):
                    coarse = max(coarse, _line_slopes(fn, base, ax, a_lo[ax], a_hi[ax], lattice))
                    fine = max(fine, _line_slopes(fn, base, ax, a_lo[ax], a_hi[ax], 2 * lattice - 1))
            est = max(est, fine)
            if not math.isfinite(est) or fine > 1.5 * coarse + 1e-9:
                divergent.append((name, r))
                est = math.inf
            lipschitz[name].append(est)

    X = rng.uniform(lo_x, hi_x, size=(samples, problem.n))
    D1 = problem.xi_derivative(1, X)
    L_xi = max(lipschitz["xi"][0], max(operator_norm(D1[i], out_axes=1) for i in range(samples)))
    W = rng.uniform(lo, hi, size=(samples, p))
    Ds = problem.tensor("sigma", 1, t_mid, W)[..., problem.n + problem.m :]
    L_sz_est = max(operator_norm(Ds[i], out_axes=2) for i in range(samples)) if p > problem.n + problem.m else 0.0
    L_sz = max(problem.L_sigma_z, L_sz_est)
    product = L_xi * L_sz
    passes = not divergent and math.isfinite(L_xi) and product < 1.0
    if L_sz_est > problem.L_sigma_z * (1 + 1e-8) + 1e-12:
        notes.append(f"sampled L_sigma_z {L_sz_est:.4g} exceeds declared {problem.L_sigma_z:.4g}")
    return MllcReport(
        k=k,
        passes=passes,
        lipschitz=lipschitz,
        divergent=divergent,
        L_xi_x=L_xi,
        L_sigma_z=problem.L_sigma_z,
        L_sigma_z_estimate=L_sz_est,
        margin=1.0 - product,
        derivative_source=problem.derivative_source,
        notes=notes,
    )
