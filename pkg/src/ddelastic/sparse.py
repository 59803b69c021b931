"""Sparse storage helpers, banded SPD factorisation and small dense pencils."""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee


class IndefiniteMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD is not."""


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted, unique column indices, float64."""
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x):
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} vs vector {x.shape}")
    return A @ x


def bandwidth(A) -> int:
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0
    return int(np.max(np.abs(A.row - A.col)))


class SpdFactorization:
    """Banded Cholesky factor of a sparse SPD matrix under an RCM ordering.

    Solves are read-only on the stored factor and may run concurrently.
    """

    def __init__(self, A, *, symmetry_tol=1e-12):
        A = as_csr(A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.n = n
        if n == 0:
            self.perm = np.empty(0, dtype=np.int64)
            self.bandwidth = 0
            self._cb = None
            return
        scale = abs(A).max()
        if abs(A - A.T).max() > symmetry_tol * max(scale, 1.0):
            raise ValueError("matrix is not symmetric")
        perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
        P = A[perm][:, perm].tocoo()
        lower = P.row >= P.col
        kd = int(np.max(P.row[lower] - P.col[lower]))
        ab = np.zeros((kd + 1, n))
        ab[P.row[lower] - P.col[lower], P.col[lower]] = P.data[lower]
        try:
            cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteMatrixError(f"matrix is not positive definite: {exc}") from None
        self.perm = perm
        self.bandwidth = kd
        self._cb = cb

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, factor has {self.n}")
        if self.n == 0:
            return np.zeros_like(b)
        y = sla.cho_solve_banded((self._cb, True), b[self.perm], check_finite=False)
        x = np.empty_like(y)
        x[self.perm] = y
        return x


def factorize_spd(A) -> SpdFactorization:
    return SpdFactorization(A)


def dense_sym_gen_eig(A, B):
    """Eigenpairs of A y = theta B y, ascending, with Y^T B Y = I."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"incompatible pencil shapes {A.shape}, {B.shape}")
    try:
        theta, Y = sla.eigh(A, B)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"B is not positive definite: {exc}") from None
    return theta, Y


def dense_fractional_apply(M, L, theta, v, power_sign=1):
    """Apply M (M^-1 L)^(1-theta) (power_sign=+1) or its inverse (-1) to v."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta={theta} outside [0, 1]")
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=np.float64)
    L = np.asarray(L.toarray() if sp.issparse(L) else L, dtype=np.float64)
    lam, Phi = dense_sym_gen_eig(L, M)
    if lam.size and lam[0] <= 0:
        raise ValueError(f"pencil (L, M) has nonpositive eigenvalue {lam[0]:.3e}")
    v = np.asarray(v, dtype=np.float64)
    if power_sign == 1:
        MPhi = M @ Phi
        return MPhi @ (lam ** (1.0 - theta) * (MPhi.T @ v))
    if power_sign == -1:
        return Phi @ (lam ** (theta - 1.0) * (Phi.T @ v))
    raise ValueError("power_sign must be +1 or -1")


def dump_matrix_market(path, A, comment=""):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
