import numpy as np
import pytest

from decouple import dual


def test_product_rule():
    x = dual.seed(np.array([2.0, 3.0]), np.array([1.0, 0.0]))
    y = x * x + 3.0 * x
    np.testing.assert_array_equal(dual.primal(y), [10.0, 18.0])
    np.testing.assert_array_equal(dual.tangent(y, x.tag), [7.0, 0.0])


def test_nested_second_derivative():
    # f(x) = x^3 -> f'' = 6x via two nested seeds
    x0 = np.array([1.5])
    outer = dual.new_tag()
    inner = dual.new_tag()
    x = dual.Dual(dual.Dual(x0, np.ones(1), outer), dual.Dual(np.ones(1), np.zeros(1), outer), inner)
    y = x * x * x
    d_inner = dual.tangent(y, inner)
    np.testing.assert_allclose(dual.tangent(d_inner, outer), 6 * x0)


def test_independent_seeds_do_not_mix():
    a = dual.seed(np.array([1.0]), np.array([1.0]))
    b = dual.seed(np.array([2.0]), np.array([1.0]))
    y = a * b
    np.testing.assert_array_equal(dual.tangent(y, b.tag).re, [1.0])
    np.testing.assert_array_equal(dual.tangent(y, b.tag).du, [1.0])
    with pytest.raises(ValueError):
        dual.tangent(y, a.tag)


def test_solve_derivative_matches_finite_difference():
    rng = np.random.default_rng(0)
    S = np.eye(3)[None] + 0.2 * rng.standard_normal((1, 3, 3))
    dS = rng.standard_normal((1, 3, 3))
    R = rng.standard_normal((1, 3, 2))
    X = dual.solve(dual.seed(S, dS), R)
    eps = 1e-6
    fd = (np.linalg.solve(S + eps * dS, R) - np.linalg.solve(S - eps * dS, R)) / (2 * eps)
    np.testing.assert_allclose(X.du, fd, atol=1e-8)


def test_einsum_bilinear():
    rng = np.random.default_rng(1)
    A, B = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4))
    dA, dB = rng.standard_normal(A.shape), rng.standard_normal(B.shape)
    tag = dual.new_tag()
    out = dual.einsum("Zij,Zj->Zi", dual.Dual(A, dA, tag), dual.Dual(B, dB, tag))
    ref = np.einsum("Zij,Zj->Zi", dA, B) + np.einsum("Zij,Zj->Zi", A, dB)
    np.testing.assert_allclose(out.du, ref, atol=1e-14)


def test_stack_with_constants():
    x = dual.seed(np.ones(2), np.full(2, 2.0))
    s = dual.stack([x, np.zeros(2)], axis=0)
    np.testing.assert_array_equal(s.du, [[2.0, 2.0], [0.0, 0.0]])
