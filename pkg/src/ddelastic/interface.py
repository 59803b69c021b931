"""Fractional interface norm M (M^-1 L)^(1-theta) and its approximate inverse.

The inverse is applied per displacement component with a Lanczos projection
of the trace pencil (L, M). Inverse Lanczos builds its basis from Laplacian
solves, which are done by PCG preconditioned with face-wise blocks of L.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .krylov import KrylovConfig, KrylovStats, pcg
from .mesh import InterfaceTopology
from .sparse import dense_fractional_apply, dense_sym_gen_eig, factorize_spd

MODES = ("inverse", "truncated", "dense")


@dataclass(frozen=True)
class FractionalNormConfig:
    theta: float = 0.5
    k: int = 10
    inner_tol: float = 1e-3
    inner_max_iter: int = 500
    mode: str = "inverse"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta={self.theta} outside [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.inner_tol < 1.0:
            raise ValueError("inner_tol must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


class FacePreconditioner:
    """Block-diagonal approximation of L: one SPD block per face, Jacobi
    scaling at cross points. Face couplings through cross points are
    dropped, so every block is built independently; the blocks are then
    stacked into one block-diagonal factor so an application is one solve.
    """

    def __init__(self, L, topology: InterfaceTopology):
        L = sp.csr_matrix(L)
        n = L.shape[0]
        covered = np.zeros(n, dtype=int)
        blocks = []
        for face in topology.faces:
            covered[face] += 1
            block = L[face][:, face]
            # a face with only natural ends is a pure Neumann Laplacian
            diag = block.diagonal()
            if np.abs(block @ np.ones(len(face))).max() <= 1e-12 * diag.max():
                block = block + sp.identity(len(face)) * (1e-10 * diag.sum() / len(face))
            blocks.append(block)
        covered[topology.cross_points] += 1
        if np.any(covered != 1):
            raise ValueError("faces and cross points must partition the interface nodes")
        self.faces = list(topology.faces)
        self.face_index = (np.concatenate(self.faces) if self.faces
                           else np.empty(0, dtype=np.int64))
        self.factor = factorize_spd(sp.block_diag(blocks, format="csr")) if blocks else None
        self.cross_points = np.asarray(topology.cross_points)
        self.cross_diag = L.diagonal()[self.cross_points]
        self.n = n
        self.n_applications = 0
        self.apply_seconds = 0.0

    @property
    def n_blocks(self) -> int:
        return len(self.faces) + len(self.cross_points)

    def __call__(self, v):
        t0 = time.perf_counter()
        v = np.asarray(v, dtype=np.float64)
        out = np.empty_like(v)
        if self.factor is not None:
            out[self.face_index] = self.factor.solve(v[self.face_index])
        out[self.cross_points] = v[self.cross_points] / self.cross_diag
        self.apply_seconds += time.perf_counter() - t0
        self.n_applications += 1
        return out


def build_face_preconditioner(L, topology: InterfaceTopology) -> FacePreconditioner:
    return FacePreconditioner(L, topology)


def laplacian_solve(L, fp, v, cfg: KrylovConfig):
    """PCG solve of L x = v with the face preconditioner."""
    return pcg(L, v, fp, cfg)


def _m_orthonormalise(y, W, MW, j):
    """Orthogonalise y against the first j columns of W in the M inner product, twice."""
    for _ in range(2):
        if j:
            y = y - W[:, :j] @ (MW[:, :j].T @ y)
    return y


def lanczos_pencil(M, L, v, k, L_solve=None, M_solve=None, mode="inverse"):
    """M-orthonormal Lanczos basis for the pencil (L, M) started from M^-1 v.

    ``mode="inverse"`` expands with L^-1 M (resolving the low end of the
    spectrum), ``mode="truncated"`` with M^-1 L. Full reorthogonalisation is
    used, so inexact Laplacian solves only perturb the subspace; the projected
    matrices are formed explicitly.

    Returns ``(W, A_k, B_k)`` with ``A_k = W^T L W`` and ``B_k = W^T M W``.
    The basis may be shorter than ``k`` on breakdown.
    """
    M = sp.csr_matrix(M)
    L = sp.csr_matrix(L)
    n = M.shape[0]
    if M_solve is None:
        M_solve = factorize_spd(M).solve
    if L_solve is None and mode == "inverse":
        L_solve = factorize_spd(L).solve
    k = min(k, n)
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        raise ValueError("Lanczos seed vector must be nonzero")
    W = np.zeros((n, k))
    MW = np.zeros((n, k))
    q = M_solve(v)
    Mq = M @ q
    nrm = np.sqrt(q @ Mq)
    W[:, 0], MW[:, 0] = q / nrm, Mq / nrm
    j = 1
    while j < k:
        if mode == "inverse":
            y = L_solve(MW[:, j - 1])
        else:
            y = M_solve(L @ W[:, j - 1])
        size0 = np.sqrt(y @ (M @ y))
        y = _m_orthonormalise(y, W, MW, j)
        My = M @ y
        beta = np.sqrt(max(y @ My, 0.0))
        if beta <= 1e-10 * size0:
            break
        W[:, j], MW[:, j] = y / beta, My / beta
        j += 1
    W = W[:, :j]
    A_k = W.T @ (L @ W)
    B_k = W.T @ (M @ W)
    return W, 0.5 * (A_k + A_k.T), 0.5 * (B_k + B_k.T)


@dataclass
class NormDiagnostics:
    applications: int = 0
    basis_sizes: list[int] = field(default_factory=list)
    pcg_iterations: list[int] = field(default_factory=list)
    min_ritz: list[float] = field(default_factory=list)
    seconds: float = 0.0


def _check_anchored(L):
    """Every connected piece of the interface must carry a Dirichlet end,
    otherwise constants lie in the kernel of L."""
    n_comp, labels = connected_components(L, directed=False)
    scale = abs(L).max()
    for c in range(n_comp):
        ones = (labels == c).astype(np.float64)
        if np.abs(L @ ones).max() <= 1e-12 * scale:
            raise ValueError("interface Laplacian is singular: an interface piece does not "
                             "touch the clamped boundary")


class FractionalNorm:
    """Approximate inverse of the scalar norm H = M (M^-1 L)^(1-theta)."""

    def __init__(self, M, L, cfg: FractionalNormConfig, face_preconditioner=None):
        self.M = sp.csr_matrix(M)
        self.L = sp.csr_matrix(L)
        self.cfg = cfg
        self.fp = face_preconditioner
        self.n = self.M.shape[0]
        _check_anchored(self.L)
        self.diagnostics = NormDiagnostics()
        self._M_solve = factorize_spd(self.M).solve
        self._inner_cfg = KrylovConfig(tol=cfg.inner_tol, max_iter=cfg.inner_max_iter)
        self._exact_L = None
        if cfg.mode == "dense":
            lam, Phi = dense_sym_gen_eig(self.L.toarray(), self.M.toarray())
            if lam[0] <= 0:
                raise ValueError(f"pencil (L, M) has nonpositive eigenvalue {lam[0]:.3e}")
            self._dense = (lam, Phi)
        elif self.fp is None:
            self._exact_L = factorize_spd(self.L).solve

    def _L_solve(self, r):
        if self._exact_L is not None:
            return self._exact_L(r)
        x, stats = laplacian_solve(self.L, self.fp, r, self._inner_cfg)
        self.diagnostics.pcg_iterations.append(stats.iterations)
        return x

    def apply_inverse(self, v):
        t0 = time.perf_counter()
        theta = self.cfg.theta
        d = self.diagnostics
        d.applications += 1
        v = np.asarray(v, dtype=np.float64)
        if not np.any(v):
            return np.zeros_like(v)
        if self.cfg.mode == "dense":
            lam, Phi = self._dense
            z = Phi @ (lam ** (theta - 1.0) * (Phi.T @ v))
        else:
            W, A_k, B_k = lanczos_pencil(self.M, self.L, v, self.cfg.k, L_solve=self._L_solve,
                                         M_solve=self._M_solve, mode=self.cfg.mode)
            ritz, Y = dense_sym_gen_eig(A_k, B_k)
            if ritz[0] <= 0:
                raise ValueError(
                    f"nonpositive Ritz value {ritz[0]:.3e}: check the Dirichlet treatment of L")
            d.basis_sizes.append(W.shape[1])
            d.min_ritz.append(float(ritz[0]))
            WY = W @ Y
            z = WY @ (ritz ** (theta - 1.0) * (WY.T @ v))
        d.seconds += time.perf_counter() - t0
        return z


def apply_fractional_inverse(M, L, cfg: FractionalNormConfig, fp, v):
    return FractionalNorm(M, L, cfg, fp).apply_inverse(v)


class InterfacePreconditioner:
    """Component-wise direct sum of the scalar fractional norm, inverted."""

    def __init__(self, norm: FractionalNorm, d: int = 2):
        self.norm = norm
        self.d = d

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] % self.d:
            raise ValueError(f"interface vector length {v.shape[0]} not divisible by d={self.d}")
        ns = v.shape[0] // self.d
        if ns != self.norm.n:
            raise ValueError(f"expected {self.d * self.norm.n} interface entries, got {v.shape[0]}")
        return np.concatenate([self.norm.apply_inverse(v[c * ns:(c + 1) * ns])
                               for c in range(self.d)])


def apply_interface_preconditioner(norm: FractionalNorm, v, d=2):
    return InterfacePreconditioner(norm, d)(v)


def full_norm_dense(M, L, theta):
    """Dense H = M + M (M^-1 L)^(1-theta); used only for equivalence checks."""
    M = np.asarray(M.toarray() if sp.issparse(M) else M)
    n = M.shape[0]
    Ht = np.column_stack([dense_fractional_apply(M, L, theta, e, 1) for e in np.eye(n)])
    return M + Ht, Ht
