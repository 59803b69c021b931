import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ddelastic.sparse import (IndefiniteMatrixError, as_csr, bandwidth, dense_fractional_apply,
                              dense_sym_gen_eig, dump_matrix_market, factorize_spd, spmv)


def random_spd(n, seed, shift=1.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    return A @ A.T + shift * n * np.eye(n)


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_spmv_basic():
    x = np.arange(4.0)
    np.testing.assert_array_equal(spmv(as_csr(sp.identity(4)), x), x)
    np.testing.assert_array_equal(spmv(as_csr(sp.csr_matrix((4, 4))), x), 0)
    with pytest.raises(ValueError):
        spmv(as_csr(sp.identity(3)), x)


def test_spmv_random_dense_oracle():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 5))
    A[rng.random((5, 5)) < 0.4] = 0
    x = rng.standard_normal(5)
    ref = [sum(A[i, j] * x[j] for j in range(5)) for i in range(5)]
    np.testing.assert_allclose(spmv(as_csr(A), x), ref, rtol=1e-15, atol=1e-15)


def test_as_csr_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    C = as_csr(A)
    assert C.has_sorted_indices and C.nnz == 2 and C[0, 1] == 3.0
    assert bandwidth(laplacian_1d(6)) == 1


def test_cholesky_diagonal():
    f = factorize_spd(sp.diags([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(f.solve(np.array([1.0, 2.0, 3.0])), [1, 1, 1], rtol=1e-15)


def test_cholesky_laplacian_hand_solve():
    f = factorize_spd(laplacian_1d(4))
    np.testing.assert_allclose(f.solve(np.eye(4)[0]), [0.8, 0.6, 0.4, 0.2], rtol=1e-14)


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(IndefiniteMatrixError):
        factorize_spd(sp.diags([1.0, -1.0, 2.0]))
    with pytest.raises(ValueError):
        factorize_spd(sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]])))


def test_cholesky_random_sparse_matches_dense():
    rng = np.random.default_rng(4)
    n = 60
    B = sp.random(n, n, density=0.05, random_state=5)
    A = (B @ B.T + n * sp.identity(n)).tocsr()
    f = factorize_spd(A)
    b = rng.standard_normal((n, 3))
    np.testing.assert_allclose(f.solve(b), np.linalg.solve(A.toarray(), b), rtol=1e-10)
    assert f.bandwidth <= bandwidth(A)


def test_gen_eig_trivial_cases():
    theta, _ = dense_sym_gen_eig(np.eye(3), np.eye(3))
    np.testing.assert_allclose(theta, 1.0)
    theta, Y = dense_sym_gen_eig(np.diag([1.0, 4.0]), np.eye(2))
    np.testing.assert_allclose(theta, [1, 4])
    np.testing.assert_allclose(np.abs(Y), np.eye(2), atol=1e-15)


def test_gen_eig_residual():
    A, B = random_spd(6, 0), random_spd(6, 1)
    theta, Y = dense_sym_gen_eig(A, B)
    assert np.linalg.norm(A @ Y - B @ Y * theta) <= 1e-10 * np.linalg.norm(A)
    np.testing.assert_allclose(Y.T @ B @ Y, np.eye(6), atol=1e-12)
    with pytest.raises(ValueError):
        dense_sym_gen_eig(A, -B)


def test_fractional_endpoints():
    M, L = random_spd(5, 2), random_spd(5, 3)
    v = np.random.default_rng(4).standard_normal(5)
    np.testing.assert_allclose(dense_fractional_apply(M, L, 1.0, v, 1), M @ v, rtol=1e-10)
    np.testing.assert_allclose(dense_fractional_apply(M, L, 1.0, v, -1), np.linalg.solve(M, v),
                               rtol=1e-9)
    np.testing.assert_allclose(dense_fractional_apply(M, L, 0.0, v, 1), L @ v, rtol=1e-9)


def test_fractional_scalar():
    M, L = np.array([[2.0]]), np.array([[8.0]])
    assert dense_fractional_apply(M, L, 0.5, [1.0], 1)[0] == pytest.approx(4.0, rel=1e-15)
    assert dense_fractional_apply(M, L, 0.5, [1.0], -1)[0] == pytest.approx(0.25, rel=1e-15)


def test_fractional_bad_args():
    with pytest.raises(ValueError):
        dense_fractional_apply(np.eye(2), np.eye(2), 1.5, np.ones(2))
    with pytest.raises(ValueError):
        dense_fractional_apply(np.eye(2), np.eye(2), 0.5, np.ones(2), 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 12),
       theta=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
def test_fractional_round_trip(seed, n, theta):
    M, L = random_spd(n, seed), random_spd(n, seed + 1)
    v = np.random.default_rng(seed).standard_normal(n)
    w = dense_fractional_apply(M, L, theta, dense_fractional_apply(M, L, theta, v, 1), -1)
    assert np.linalg.norm(w - v) <= 1e-10 * np.linalg.norm(v)


def test_matrix_market_dump(tmp_path):
    import scipy.io
    A = laplacian_1d(5)
    dump_matrix_market(tmp_path / "a.mtx", A, comment="lap")
    B = scipy.io.mmread(str(tmp_path / "a.mtx"))
    assert abs(sp.csr_matrix(B) - A).max() == 0
