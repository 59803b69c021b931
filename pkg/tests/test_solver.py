import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ddelastic import FractionalNormConfig, KrylovConfig, Problem, ProblemSpec
from ddelastic.fem import BlockSystem
from ddelastic.solver import (BlockPreconditioner, Subdomains, apply_system, exact_schur_dense,
                              make_preconditioner, schur_matvec, solve_global,
                              solve_schur_sequence, write_reports_csv)


@pytest.fixture(scope="module")
def p8():
    return Problem(ProblemSpec(h=1 / 8, px=2, py=2))


def dense_schur(sys_):
    KII = sp.block_diag(sys_.K_II).toarray()
    KIG = sp.vstack(sys_.K_IG).toarray()
    return sys_.K_GG.toarray() - KIG.T @ np.linalg.solve(KII, KIG)


def test_apply_system(p8):
    sys_ = p8.system()
    assert not apply_system(sys_, np.zeros(sys_.n)).any()
    u = np.linalg.solve(sys_.monolithic().toarray(), sys_.f)
    assert np.linalg.norm(sys_.f - apply_system(sys_, u)) <= 1e-10 * np.linalg.norm(sys_.f)
    x = np.random.default_rng(0).standard_normal(sys_.n)
    np.testing.assert_allclose(apply_system(sys_, x), sys_.monolithic() @ x, rtol=1e-13, atol=1e-13)
    with pytest.raises(ValueError):
        apply_system(sys_, np.ones(3))


def test_apply_system_single_subdomain():
    sys_ = Problem(ProblemSpec(h=1 / 8, px=1, py=1)).system()
    x = np.random.default_rng(1).standard_normal(sys_.n)
    np.testing.assert_array_equal(apply_system(sys_, x), sys_.K_II[0] @ x)


def test_schur_matches_dense(p8):
    sys_ = p8.system()
    S = dense_schur(sys_)
    v = np.random.default_rng(2).standard_normal(sys_.n_interface)
    assert np.linalg.norm(schur_matvec(sys_, v) - S @ v) <= 1e-10 * np.linalg.norm(S @ v)
    np.testing.assert_allclose(exact_schur_dense(sys_), S, atol=1e-10)
    assert v @ schur_matvec(sys_, v) > 0
    assert np.linalg.eigvalsh(S).min() > 0
    with pytest.raises(ValueError):
        exact_schur_dense(sys_, cap=10)


def artificial_decoupled(p8):
    """Same blocks with K_IG removed."""
    sys_ = p8.system()
    zero = tuple(sp.csr_matrix(K.shape) for K in sys_.K_IG)
    return BlockSystem(sys_.K_II, zero, sys_.K_GG, sys_.f_I, sys_.f_G, sys_.offsets)


def test_schur_without_coupling(p8):
    sys_ = artificial_decoupled(p8)
    v = np.random.default_rng(3).standard_normal(sys_.n_interface)
    np.testing.assert_allclose(schur_matvec(sys_, v), sys_.K_GG @ v, rtol=1e-15)
    with pytest.raises(ValueError):
        schur_matvec(sys_, np.ones(2))


def test_identity_preconditioner_zero_interface(p8):
    sys_ = p8.system()
    bp = BlockPreconditioner(sys_, "identity")
    v = np.random.default_rng(4).standard_normal(sys_.n)
    v[sys_.n_interior:] = 0
    w = bp(v)
    ref = np.concatenate([np.linalg.solve(K.toarray(), vi) for K, vi in zip(sys_.K_II, sys_.split(v)[0])])
    np.testing.assert_allclose(w[:sys_.n_interior], ref, rtol=1e-10)
    assert not w[sys_.n_interior:].any()


def test_exact_schur_block_structure(p8):
    sys_ = p8.system()
    bp = BlockPreconditioner(sys_, "exact-schur")
    v = np.random.default_rng(5).standard_normal(sys_.n)
    KPv = apply_system(sys_, bp(v))
    vI, vG = sys_.split(v)
    nI = sys_.n_interior
    np.testing.assert_allclose(KPv[:nI], v[:nI], rtol=1e-10, atol=1e-10)
    lower = vG + sum(K.T @ np.linalg.solve(A.toarray(), x) for K, A, x in zip(sys_.K_IG, sys_.K_II, vI))
    np.testing.assert_allclose(KPv[nI:], lower, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("choice", ["identity", "exact-schur"])
def test_single_subdomain_preconditioner_is_inverse(choice):
    sys_ = Problem(ProblemSpec(h=1 / 8, px=1, py=1)).system()
    v = np.random.default_rng(6).standard_normal(sys_.n)
    np.testing.assert_allclose(BlockPreconditioner(sys_, choice)(v),
                               spsolve(sys_.monolithic().tocsc(), v), rtol=1e-10)


@pytest.mark.parametrize("px,py", [(2, 1), (2, 2), (4, 2), (4, 4)])
def test_exact_schur_two_iterations(px, py):
    p = Problem(ProblemSpec(h=1 / 8, px=px, py=py))
    u, rep, sys_, _ = p.solve("exact-schur", krylov_cfg=KrylovConfig(tol=1e-10))
    assert rep.outer_iterations <= 2 and rep.stats.converged
    assert rep.method == "global" and rep.precond == "exact-schur"


def test_schur_sequence_agrees_with_global():
    p = Problem(ProblemSpec(h=1 / 16, px=2, py=2))
    sys_ = p.system()
    norm = p.fractional_norm(FractionalNormConfig())
    cfg = KrylovConfig(tol=1e-11)
    u1, _ = solve_global(sys_, make_preconditioner(sys_, "hnorm", norm), cfg, norm)
    u2, rep = solve_schur_sequence(sys_, make_preconditioner(sys_, "hnorm", norm), cfg, norm)
    assert np.linalg.norm(u1 - u2) <= 1e-8 * np.linalg.norm(u1)
    assert rep.method == "schur" and rep.inner_pcg_per_iteration


def test_schur_sequence_exact_one_iteration(p8):
    sys_ = p8.system()
    u, rep = solve_schur_sequence(sys_, make_preconditioner(sys_, "exact-schur"),
                                  KrylovConfig(tol=1e-10))
    assert rep.outer_iterations == 1
    ref = spsolve(sys_.monolithic().tocsc(), sys_.f)
    assert np.linalg.norm(u - ref) <= 1e-8 * np.linalg.norm(ref)


def test_schur_sequence_pure_interior(p8):
    sys_ = artificial_decoupled(p8)
    sys_ = sys_.with_load(np.concatenate(list(sys_.f_I) + [np.zeros(sys_.n_interface)]))
    u, _ = solve_schur_sequence(sys_, make_preconditioner(sys_, "identity"))
    assert not u[sys_.n_interior:].any()
    ref = np.concatenate([np.linalg.solve(K.toarray(), f) for K, f in zip(sys_.K_II, sys_.f_I)])
    np.testing.assert_allclose(u[:sys_.n_interior], ref, rtol=1e-10, atol=1e-14)


def test_hnorm_uses_fgmres_and_counts_pcg():
    p = Problem(ProblemSpec(h=1 / 16, px=2, py=2))
    u, rep, sys_, norm = p.solve("hnorm")
    assert rep.stats.converged and rep.true_residual <= 1e-6
    assert len(rep.inner_pcg_per_iteration) >= rep.outer_iterations
    assert sum(rep.pcg_per_solve) == rep.stats.inner_iteration_total
    assert rep.precond_apply_seconds > 0


def test_threaded_subdomains_match_serial():
    p = Problem(ProblemSpec(h=1 / 16, px=4, py=2))
    u1, r1, _, _ = p.solve("identity")
    u2, r2, _, _ = p.solve("identity", workers=3)
    np.testing.assert_array_equal(u1, u2)
    assert r1.stats.residual_history == r2.stats.residual_history


def test_subdomain_timing_is_critical_path(p8):
    sub = Subdomains(p8.system())
    assert sub.critical_path_seconds == 0.0
    sub.solve([np.ones(K.shape[0]) for K in p8.system().K_II])
    assert sub.n_solves == 1 and sub.critical_path_seconds == sub.solve_seconds.max()


def test_make_preconditioner_errors(p8):
    sys_ = p8.system()
    with pytest.raises(ValueError):
        make_preconditioner(sys_, "hnorm")
    with pytest.raises(ValueError):
        make_preconditioner(sys_, "jacobi")


def test_reports_csv(tmp_path):
    p = Problem(ProblemSpec(h=1 / 8, px=2, py=2))
    _, rep, _, _ = p.solve("identity")
    write_reports_csv(tmp_path / "t.csv", [rep.csv_row("1/8", 4, "")])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("h,N,theta,precond,outer_iters") and len(lines) == 2
