"""Right-preconditioned GMRES, flexible GMRES and preconditioned CG."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .sparse import IndefiniteMatrixError


@dataclass(frozen=True)
class KrylovConfig:
    tol: float = 1e-6
    max_iter: int = 1000
    restart: int | None = None

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tolerance {self.tol} outside (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be None or >= 1")


@dataclass
class KrylovStats:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    inner_iteration_total: int = 0
    final_residual: float = np.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for k, r in enumerate(self.residual_history):
                w.writerow([k, repr(float(r))])


def _identity(x):
    return x


def _as_operator(A):
    if callable(A):
        return A
    return lambda x: A @ x


def _gmres(A, b, Minv, cfg, x0, flexible, basis_out=None):
    A, Minv = _as_operator(A), _as_operator(Minv or _identity)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    stats = KrylovStats()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        stats.residual_history.append(0.0)
        stats.converged, stats.final_residual = True, 0.0
        return np.zeros(n), stats
    r = b - A(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    stats.residual_history.append(rel)
    m_max = cfg.restart or cfg.max_iter
    while rel > cfg.tol and stats.iterations < cfg.max_iter:
        m = min(m_max, cfg.max_iter - stats.iterations)
        beta = np.linalg.norm(r)
        V = np.zeros((n, m + 1))
        Z = np.zeros((n, m)) if flexible else None
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        j = 0
        for j in range(m):
            z = Minv(V[:, j])
            if flexible:
                Z[:, j] = z
            w = A(z)
            w_norm0 = np.linalg.norm(w)
            # modified Gram-Schmidt, second pass when cancellation is severe
            for _ in range(2):
                for i in range(j + 1):
                    hij = V[:, i] @ w
                    H[i, j] += hij
                    w -= hij * V[:, i]
                w_norm = np.linalg.norm(w)
                if w_norm > 0.7 * w_norm0:
                    break
                w_norm0 = w_norm
            H[j + 1, j] = w_norm
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            stats.iterations += 1
            est = abs(g[j + 1]) / bnorm
            stats.residual_history.append(est)
            breakdown = w_norm <= 1e-14 * beta
            if not breakdown:
                V[:, j + 1] = w / w_norm
            if est <= cfg.tol or breakdown:
                break
        k = j + 1
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        if flexible:
            x = x + Z[:, :k] @ y
        else:
            x = x + Minv(V[:, :k] @ y)
        if basis_out is not None:
            basis_out.append(V[:, :k + (0 if breakdown else 1)].copy())
        r = b - A(x)
        rel = np.linalg.norm(r) / bnorm
        if breakdown:
            break
    stats.final_residual = rel
    stats.converged = rel <= cfg.tol
    return x, stats


def gmres(A, b, Minv=None, cfg: KrylovConfig = KrylovConfig(), x0=None, basis_out=None):
    """Solve A x = b with GMRES right-preconditioned by the fixed operator Minv.

    Convergence is judged on the true relative residual ||b - A x|| / ||b||.
    """
    return _gmres(A, b, Minv, cfg, x0, flexible=False, basis_out=basis_out)


def fgmres(A, b, Minv=None, cfg: KrylovConfig = KrylovConfig(), x0=None, basis_out=None):
    """Flexible GMRES: Minv may change between iterations; its outputs are stored."""
    return _gmres(A, b, Minv, cfg, x0, flexible=True, basis_out=basis_out)


def pcg(A, b, Minv=None, cfg: KrylovConfig = KrylovConfig(), x0=None):
    """Preconditioned conjugate gradients for SPD A and SPD Minv."""
    A, Minv = _as_operator(A), _as_operator(Minv or _identity)
    b = np.asarray(b, dtype=np.float64)
    stats = KrylovStats()
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        stats.residual_history.append(0.0)
        stats.converged, stats.final_residual = True, 0.0
        return np.zeros_like(b), stats
    r = b - A(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    stats.residual_history.append(rel)
    if rel <= cfg.tol:
        stats.converged, stats.final_residual = True, rel
        return x, stats
    z = Minv(r)
    p = z.copy()
    rz = r @ z
    while stats.iterations < cfg.max_iter:
        Ap = A(p)
        curv = p @ Ap
        if curv <= 0.0:
            raise IndefiniteMatrixError(f"nonpositive curvature p^T A p = {curv:.3e}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        stats.iterations += 1
        rel = np.linalg.norm(r) / bnorm
        stats.residual_history.append(rel)
        if rel <= cfg.tol:
            break
        z = Minv(r)
        rz_new = r @ z
        if rz_new <= 0.0:
            raise IndefiniteMatrixError("preconditioner is not positive definite")
        p = z + (rz_new / rz) * p
        rz = rz_new
    stats.final_residual = rel
    stats.converged = rel <= cfg.tol
    return x, stats
