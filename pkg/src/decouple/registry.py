"""Built-in test problems."""

from __future__ import annotations

import math

import numpy as np
import sympy as sp

from .errors import UnknownProblemError
from .model import FbsdeProblem, make_symbols


def skorokhod(T: float = 1.0, g_scale: float = 1.0, delta_scale: float = 0.1) -> FbsdeProblem:
    """Two-dimensional forward process with z-dependent drift in the second coordinate.

    ``X1 = x1 + W``, ``dX2 = Z^2 dt``, ``f = 0``, ``xi = g(x1) - delta(x2)`` with
    ``g = g_scale*tanh`` and ``delta = delta_scale*tanh``. The forward SDE does not
    depend on z through sigma, so ``L_sigma_z = 0``.
    """
    sym = make_symbols(2, 1, 1)
    t, x, y, z = sym
    return FbsdeProblem.from_sympy(
        "skorokhod",
        2, 1, 1, T,
        mu=[0, z[0][0] ** 2],
        sigma=[[1], [0]],
        f=[0],
        xi=[g_scale * sp.tanh(x[0]) - delta_scale * sp.tanh(x[1])],
        symbols=sym,
        params={"T": T, "g_scale": g_scale, "delta_scale": delta_scale},
        hints={
            "box": [(-8.0, 8.0), (-4.0, 4.0)],
            "nodes": [161, 51],
            "boundary_policy": "linearExtrapolate",
            "dt": 1e-2,
            "k": 2,
        },
    )


def burgers_blowup(T: float = 1.5) -> FbsdeProblem:
    """Inviscid Burgers characteristics: ``dX = Y dt``, ``xi(x) = x``.

    The decoupling field is ``u(t, x) = x / (1 - (T - t))``; its gradient blows up
    at ``t = T - 1``.
    """
    sym = make_symbols(1, 1, 1)
    t, x, y, z = sym

    def exact(level, t, X):
        X = np.asarray(X, dtype=float)
        c = 1.0 / (1.0 - (T - t))
        N = X.shape[0]
        if level == 0:
            return (c * X[:, 0]).reshape(N, 1)
        val = c if level == 1 else 0.0
        return np.full((N, 1) + (1,) * level, val)

    return FbsdeProblem.from_sympy(
        "burgers_blowup",
        1, 1, 1, T,
        mu=[y[0]],
        sigma=[[0]],
        f=[0],
        xi=[x[0]],
        symbols=sym,
        exact=exact,
        params={"T": T},
        hints={
            "box": [(-1.0, 1.0)],
            "nodes": [41],
            "boundary_policy": "linearExtrapolate",
            "dt": 1e-3,
            "k": 1,
        },
    )


def heat(T: float = 1.0, quadratic_driver: bool = False) -> FbsdeProblem:
    """Brownian forward process with ``xi = sin``; ``f = 0`` or ``f = y^2 / 2``.

    With ``f = 0``, ``u^(i)(t, x) = exp(-(T - t)/2) sin^(i)(x)``.
    """
    sym = make_symbols(1, 1, 1)
    t, x, y, z = sym

    exact = None
    if not quadratic_driver:

        def exact(level, t, X):
            X = np.asarray(X, dtype=float)
            N = X.shape[0]
            val = math.exp(-(T - t) / 2) * np.sin(X[:, 0] + level * math.pi / 2)
            return val.reshape((N, 1) + (1,) * level)

    return FbsdeProblem.from_sympy(
        "heat",
        1, 1, 1, T,
        mu=[0],
        sigma=[[1]],
        f=[y[0] ** 2 / 2 if quadratic_driver else 0],
        xi=[sp.sin(x[0])],
        symbols=sym,
        exact=exact,
        params={"T": T, "quadratic_driver": quadratic_driver},
        hints={
            "box": [(-math.pi, math.pi)],
            "nodes": [628],
            "boundary_policy": "periodic",
            "dt": 1e-3,
            "k": 2,
        },
    )


def linear(T: float = 1.0, a: float = 1.5, mu: float = 0.0, sigma: float = 0.5) -> FbsdeProblem:
    """Constant coefficients with linear terminal value ``xi(x) = a x``.

    ``u(t, x) = a (x + mu (T - t))``, ``u^(1) = a``.
    """
    sym = make_symbols(1, 1, 1)

    def exact(level, t, X):
        X = np.asarray(X, dtype=float)
        N = X.shape[0]
        if level == 0:
            return (a * (X[:, 0] + mu * (T - t))).reshape(N, 1)
        return np.full((N, 1) + (1,) * level, a if level == 1 else 0.0)

    return FbsdeProblem.from_sympy(
        "linear",
        1, 1, 1, T,
        mu=[mu],
        sigma=[[sigma]],
        f=[0],
        xi=[a * sym[1][0]],
        symbols=sym,
        exact=exact,
        params={"T": T, "a": a, "mu": mu, "sigma": sigma},
        hints={
            "box": [(-2.0, 2.0)],
            "nodes": [41],
            "boundary_policy": "linearExtrapolate",
            "dt": 1e-2,
            "k": 2,
        },
    )


def coupled_scalar(
    T: float = 1.0, sigma0: float = 1.0, sigma_slope: float = 0.5, xi_scale: float = 0.8
) -> FbsdeProblem:
    """Scalar fully coupled problem with ``sigma = sigma0 + sigma_slope * z``.

    ``mu = 0.2 sin(y) + 0.1 z``, ``f = 0.3 cos(x) y - 0.05 z^2``,
    ``xi = xi_scale * sin(x)``; ``L_sigma_z = |sigma_slope|``.
    """
    sym = make_symbols(1, 1, 1)
    t, x, y, z = sym
    zz = z[0][0]
    return FbsdeProblem.from_sympy(
        "coupled_scalar",
        1, 1, 1, T,
        mu=[sp.Rational(1, 5) * sp.sin(y[0]) + sp.Rational(1, 10) * zz],
        sigma=[[sigma0 + sigma_slope * zz]],
        f=[sp.Rational(3, 10) * sp.cos(x[0]) * y[0] - sp.Rational(1, 20) * zz**2],
        xi=[xi_scale * sp.sin(x[0])],
        symbols=sym,
        L_sigma_z=abs(sigma_slope),
        params={"T": T, "sigma0": sigma0, "sigma_slope": sigma_slope, "xi_scale": xi_scale},
        hints={
            "box": [(-math.pi, math.pi)],
            "nodes": [200],
            "boundary_policy": "periodic",
            "dt": 1e-2,
            "k": 1,
        },
    )


_REGISTRY = {
    "skorokhod": skorokhod,
    "burgers_blowup": burgers_blowup,
    "heat": heat,
    "linear": linear,
    "coupled_scalar": coupled_scalar,
}


def problem_names() -> list[str]:
    return sorted(_REGISTRY)


def registry_get(name: str, **params) -> FbsdeProblem:
    """Instantiate a registered problem; keyword arguments override its defaults."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownProblemError(
            f"unknown problem {name!r}; known: {', '.join(problem_names())}"
        ) from None
    return factory(**params)
