import numpy as np
import pytest
import scipy.sparse as sp

from ddelastic.krylov import KrylovConfig, fgmres, gmres, pcg
from ddelastic.sparse import IndefiniteMatrixError

RNG = np.random.default_rng(11)


def spd(n, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.linspace(1, 10, n)) @ Q.T


@pytest.mark.parametrize("solver", [gmres, fgmres])
def test_identity_one_iteration(solver):
    b = RNG.standard_normal(7)
    x, st = solver(np.eye(7), b)
    assert st.iterations == 1 and st.converged
    np.testing.assert_allclose(x, b)


def test_minimal_polynomial_degree_two():
    A = np.eye(6)
    A[0, 1] = 1.0
    x, st = gmres(A, RNG.standard_normal(6), cfg=KrylovConfig(tol=1e-12))
    assert st.converged and st.iterations <= 2


def test_dense_oracle_residual():
    A = np.eye(20) * 4 + RNG.standard_normal((20, 20)) * 0.3
    b = RNG.standard_normal(20)
    x, st = gmres(A, b, cfg=KrylovConfig(tol=1e-10))
    x_ref = np.linalg.solve(A, b)
    r = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    r_ref = np.linalg.norm(b - A @ x_ref) / np.linalg.norm(b)
    assert abs(r - r_ref) <= 1e-6 and st.final_residual == pytest.approx(r, rel=1e-6)


def test_residual_history_monotone():
    A = np.eye(40) + sp.random(40, 40, density=0.2, random_state=1).toarray()
    _, st = gmres(A, RNG.standard_normal(40), cfg=KrylovConfig(tol=1e-10))
    h = np.asarray(st.residual_history)
    assert np.all(np.diff(h) <= 1e-14)


def test_fgmres_equals_gmres_for_fixed_preconditioner():
    A = spd(25, 2) + np.triu(RNG.standard_normal((25, 25)) * 0.1, 1)
    P = np.diag(1 / np.diag(A))
    b = RNG.standard_normal(25)
    x1, s1 = gmres(A, b, lambda v: P @ v, KrylovConfig(tol=1e-10))
    x2, s2 = fgmres(A, b, lambda v: P @ v, KrylovConfig(tol=1e-10))
    assert s1.iterations == s2.iterations
    np.testing.assert_allclose(s1.residual_history, s2.residual_history, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(x1, x2, rtol=1e-12, atol=1e-14)


def test_exact_inverse_preconditioner():
    A = spd(15, 3)
    Ainv = np.linalg.inv(A)
    for solver in (gmres, fgmres):
        _, st = solver(A, RNG.standard_normal(15), lambda v: Ainv @ v, KrylovConfig(tol=1e-10))
        assert st.iterations == 1


def test_fgmres_noisy_inverse():
    A = spd(30, 4)
    Ainv = np.linalg.inv(A)
    rng = np.random.default_rng(5)

    def noisy(v):
        return (Ainv + 1e-8 * rng.standard_normal(A.shape)) @ v

    _, st = fgmres(A, rng.standard_normal(30), noisy, KrylovConfig(tol=1e-10))
    assert st.converged and st.iterations <= 3


def test_gmres_restart_and_x0():
    A = np.eye(50) * 3 + RNG.standard_normal((50, 50)) * 0.2
    b = RNG.standard_normal(50)
    x, st = gmres(A, b, cfg=KrylovConfig(tol=1e-9, restart=5, max_iter=500))
    assert st.converged
    x2, st2 = gmres(A, b, cfg=KrylovConfig(tol=1e-9), x0=x)
    assert st2.iterations == 0
    np.testing.assert_array_equal(x2, x)


def test_zero_rhs():
    x, st = gmres(np.eye(3), np.zeros(3))
    assert not x.any() and st.converged
    x, st = pcg(np.eye(3), np.zeros(3))
    assert not x.any() and st.converged


def test_pcg_identity_and_exact_preconditioner():
    b = RNG.standard_normal(8)
    _, st = pcg(np.eye(8), b)
    assert st.iterations == 1
    A = spd(8, 6)
    Ainv = np.linalg.inv(A)
    x, st = pcg(A, b, lambda v: Ainv @ v, KrylovConfig(tol=1e-10))
    assert st.iterations == 1
    np.testing.assert_allclose(A @ x, b, rtol=1e-9)


def test_pcg_finite_termination():
    n = 10
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    b = RNG.standard_normal(n)
    x, st = pcg(A, b, lambda v: v / 2.0, KrylovConfig(tol=1e-10))
    assert st.converged and st.iterations <= n
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-8)


def test_pcg_detects_indefinite():
    with pytest.raises(IndefiniteMatrixError):
        pcg(np.diag([1.0, -2.0, 3.0]), np.ones(3), cfg=KrylovConfig(tol=1e-12))


@pytest.mark.parametrize("kw", [dict(tol=0), dict(tol=1.5), dict(max_iter=0), dict(restart=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        KrylovConfig(**kw)


def test_history_csv(tmp_path):
    _, st = gmres(spd(5, 1), np.ones(5))
    st.write_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "iteration,residual" and len(rows) == len(st.residual_history) + 1
