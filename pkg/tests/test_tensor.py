import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decouple.errors import ShapeMismatchError, SingularityError
from decouple.tensor import (
    Shape,
    frobenius_norm,
    gm_md_contract,
    gm_product,
    md_identity,
    neumann_inverse_apply,
    operator_norm,
)


def jacobi_sigma_max(A, sweeps=60):
    """Largest singular value by one-sided Jacobi rotations (independent of LAPACK)."""
    U = np.array(A, dtype=float).copy()
    n = U.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                a = U[:, p] @ U[:, p]
                b = U[:, q] @ U[:, q]
                c = U[:, p] @ U[:, q]
                off = max(off, abs(c) / np.sqrt(a * b) if a * b > 0 else 0.0)
                if c == 0:
                    continue
                zeta = (b - a) / (2 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta**2)) if zeta != 0 else 1.0
                cs = 1 / np.sqrt(1 + t**2)
                sn = cs * t
                up, uq = U[:, p].copy(), U[:, q].copy()
                U[:, p] = cs * up - sn * uq
                U[:, q] = sn * up + cs * uq
        if off < 1e-15:
            break
    return float(np.max(np.linalg.norm(U, axis=0)))


class TestProduct:
    def test_identity_left(self):
        B = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(gm_product(np.eye(3), B), B)

    def test_two_by_two(self):
        np.testing.assert_array_equal(gm_product(np.array([[1.0, 2], [3, 4]]), np.ones(2)), [3, 7])

    def test_against_loops(self):
        rng = np.random.default_rng(0)
        A, B = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2))
        ref = np.zeros((2, 3, 2))
        for i in range(2):
            for j in range(3):
                for k in range(2):
                    ref[i, j, k] = sum(A[i, j, z] * B[z, k] for z in range(4))
        np.testing.assert_allclose(gm_product(A, B), ref, rtol=0, atol=1e-14)

    def test_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            gm_product(np.ones((2, 3)), np.ones((2, 3)))


class TestMdContract:
    def test_identity(self):
        B = np.random.default_rng(1).standard_normal((2, 3, 4))
        np.testing.assert_allclose(gm_md_contract(md_identity(2, 3), B, 2, 3), B, atol=1e-15)

    def test_degenerate_pair(self):
        rng = np.random.default_rng(2)
        A, B = rng.standard_normal((3, 1, 1)), rng.standard_normal((1, 1, 4))
        np.testing.assert_allclose(
            gm_md_contract(A, B, 1, 1), gm_product(A[:, :, 0], B[0]), atol=1e-15
        )

    def test_vectorization_oracle(self):
        rng = np.random.default_rng(3)
        A, B = rng.standard_normal((3, 2, 2)), rng.standard_normal((2, 2, 5))
        ref = gm_product(A.reshape(3, 4), B.reshape(4, 5))
        np.testing.assert_allclose(gm_md_contract(A, B, 2, 2), ref, rtol=0, atol=1e-14)

    def test_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            gm_md_contract(np.ones((3, 2, 2)), np.ones((2, 3, 1)), 2, 2)


class TestNorms:
    def test_frobenius_examples(self):
        assert frobenius_norm(np.zeros((2, 3))) == 0.0
        assert frobenius_norm(np.array([[3.0, 4.0], [0.0, 0.0]])) == 5.0

    def test_frobenius_recursive(self):
        A = np.random.default_rng(4).standard_normal((2, 3, 2))

        def rec(X):
            if X.ndim == 1:
                return np.sqrt(np.sum(X**2))
            return np.sqrt(sum(rec(X[..., j]) ** 2 for j in range(X.shape[-1])))

        assert abs(frobenius_norm(A) - rec(A)) <= 1e-14

    def test_operator_examples(self):
        assert abs(operator_norm(np.eye(3)) - 1.0) < 1e-12
        assert abs(operator_norm(np.diag([2.0, 0.5])) - 2.0) < 1e-12

    def test_operator_vs_jacobi(self):
        A = np.random.default_rng(5).standard_normal((4, 4))
        assert abs(operator_norm(A) - jacobi_sigma_max(A)) <= 1e-8

    def test_shape_marks(self):
        Shape((2, 3, 4), frozenset({0})).validate(2, 3)
        with pytest.raises(ShapeMismatchError):
            Shape((2, 3, 4), frozenset({1})).validate(2, 3)
        with pytest.raises(ShapeMismatchError):
            Shape((0, 2))


class TestNeumann:
    def test_zero(self):
        rhs = np.random.default_rng(6).standard_normal((2, 2, 3))
        np.testing.assert_allclose(neumann_inverse_apply(np.zeros((2, 2, 2, 2)), rhs), rhs)

    def test_scalar(self):
        out = neumann_inverse_apply(np.full((1, 1, 1, 1), 0.5), np.ones((1, 1)))
        assert abs(out[0, 0] - 2.0) < 1e-15

    def test_series_oracle(self):
        rng = np.random.default_rng(7)
        K = rng.standard_normal((4, 4))
        K *= 0.4 / np.linalg.norm(K, 2)
        rhs = rng.standard_normal((2, 2, 3))
        term = rhs.reshape(4, 3)
        acc = np.zeros_like(term)
        for _ in range(61):
            acc += term
            term = K @ term
        out = neumann_inverse_apply(K.reshape(2, 2, 2, 2), rhs)
        np.testing.assert_allclose(out.reshape(4, 3), acc, atol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularityError):
            neumann_inverse_apply(np.full((1, 1, 1, 1), 1.0), np.ones((1, 1)))


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 3), elements=finite), arrays(float, (3, 4), elements=finite),
       arrays(float, (4, 2), elements=finite))
def test_associativity(A, B, C):
    np.testing.assert_allclose(
        gm_product(gm_product(A, B), C), gm_product(A, gm_product(B, C)), atol=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 2, 1), elements=finite), arrays(float, (2, 1, 2), elements=finite))
def test_md_contract_degenerate_d(A, B):
    np.testing.assert_allclose(
        gm_md_contract(A, B, 2, 1), gm_product(A[:, :, 0], B[:, 0, :]), atol=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 4), elements=finite), st.floats(0.0, 0.95), arrays(float, (2, 2, 2), elements=finite))
def test_neumann_bound(K, q, rhs):
    s = np.linalg.norm(K, 2)
    if s == 0:
        return
    K = K * (q / s)
    out = neumann_inverse_apply(K.reshape(2, 2, 2, 2), rhs)
    assert frobenius_norm(out) <= frobenius_norm(rhs) / (1 - q) * (1 + 1e-9) + 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 4), elements=finite))
def test_frobenius_dominates_operator(A):
    assert operator_norm(A) <= frobenius_norm(A) * (1 + 1e-9) + 1e-12
