"""Decomposed solves: block-triangular right preconditioning and the Schur sequence."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import BlockSystem
from .interface import FractionalNorm, InterfacePreconditioner
from .krylov import KrylovConfig, KrylovStats, fgmres, gmres
from .sparse import factorize_spd

PRECONDITIONERS = ("identity", "hnorm", "exact-schur")


class Subdomains:
    """Factorised interior blocks with (optionally threaded) independent solves.

    Results are gathered in subdomain order, so output does not depend on
    the number of workers.
    """

    def __init__(self, sys: BlockSystem, workers: int | None = None):
        self.sys = sys
        self.workers = workers
        self.factors = self._map(factorize_spd, sys.K_II)
        self.solve_seconds = np.zeros(sys.n_subdomains)
        self.n_solves = 0

    def _map(self, fn, *args):
        if self.workers and self.workers > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                return list(ex.map(fn, *args))
        return [fn(*a) for a in zip(*args)]

    def solve(self, rhs_parts):
        """Independent solves K_{I_i I_i} x_i = rhs_i."""
        def one(i, r):
            t0 = time.perf_counter()
            x = self.factors[i].solve(r)
            self.solve_seconds[i] += time.perf_counter() - t0
            return x
        out = self._map(one, range(len(rhs_parts)), rhs_parts)
        self.n_solves += 1
        return out

    @property
    def critical_path_seconds(self) -> float:
        """Mean time of one parallel solve: the slowest subdomain per call."""
        if not self.n_solves:
            return 0.0
        return float(self.solve_seconds.max() / self.n_solves)


def apply_system(sys: BlockSystem, u):
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != sys.n:
        raise ValueError(f"vector of length {u.shape[0]}, system has {sys.n} dofs")
    uI, uG = sys.split(u)
    out = np.empty(sys.n)
    yI, yG = sys.split(out)
    yG[:] = sys.K_GG @ uG if sys.n_interface else 0.0
    for i in range(sys.n_subdomains):
        yI[i][:] = sys.K_II[i] @ uI[i] + sys.K_IG[i] @ uG
        if sys.n_interface:
            yG += sys.K_IG[i].T @ uI[i]
    return out


def schur_matvec(sys: BlockSystem, v, subdomains: Subdomains | None = None):
    """S v = K_GG v - sum_i K_{G I_i} K_{I_i I_i}^-1 K_{I_i G} v."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != sys.n_interface:
        raise ValueError(f"interface vector of length {v.shape[0]}, expected {sys.n_interface}")
    subdomains = subdomains or Subdomains(sys)
    xs = subdomains.solve([K @ v for K in sys.K_IG])
    out = sys.K_GG @ v
    for K, x in zip(sys.K_IG, xs):
        out -= K.T @ x
    return out


def exact_schur_dense(sys: BlockSystem, subdomains: Subdomains | None = None, cap: int = 500):
    nG = sys.n_interface
    if nG > cap:
        raise ValueError(f"interface size {nG} exceeds dense Schur cap {cap}")
    subdomains = subdomains or Subdomains(sys)
    S = sys.K_GG.toarray()
    for fac, K in zip(subdomains.factors, sys.K_IG):
        Kd = K.toarray()
        S -= Kd.T @ fac.solve(Kd)
    return 0.5 * (S + S.T)


class BlockPreconditioner:
    """Right preconditioner P^-1 for P = [[K_II, K_IG], [0, S~]].

    ``interface`` is ``"identity"``, ``"exact-schur"`` or a callable applying
    S~^-1 to an interface vector (e.g. an ``InterfacePreconditioner``).
    """

    def __init__(self, sys: BlockSystem, interface="identity", subdomains=None):
        self.sys = sys
        self.subdomains = subdomains or Subdomains(sys)
        self.kind = interface if isinstance(interface, str) else "hnorm"
        if interface == "identity":
            self.interface_solve = lambda v: v.copy()
        elif interface == "exact-schur":
            S = exact_schur_dense(sys, self.subdomains)
            fac = factorize_spd(S) if S.size else None
            self.interface_solve = (lambda v: fac.solve(v)) if fac else (lambda v: v.copy())
        elif callable(interface):
            self.interface_solve = interface
        else:
            raise ValueError(f"unknown interface preconditioner {interface!r}")
        self.interface_seconds = 0.0

    @property
    def varying(self) -> bool:
        return self.kind == "hnorm"

    def __call__(self, v):
        sys = self.sys
        vI, vG = sys.split(np.asarray(v, dtype=np.float64))
        t0 = time.perf_counter()
        wG = self.interface_solve(vG) if sys.n_interface else vG.copy()
        self.interface_seconds += time.perf_counter() - t0
        rhs = [vi - K @ wG for vi, K in zip(vI, sys.K_IG)]
        wI = self.subdomains.solve(rhs)
        return np.concatenate(wI + [wG])


def make_preconditioner(sys: BlockSystem, choice: str, norm: FractionalNorm | None = None,
                        subdomains: Subdomains | None = None) -> BlockPreconditioner:
    if choice == "hnorm":
        if norm is None:
            raise ValueError("the hnorm preconditioner needs a FractionalNorm")
        return BlockPreconditioner(sys, InterfacePreconditioner(norm), subdomains)
    if choice not in PRECONDITIONERS:
        raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {choice!r}")
    return BlockPreconditioner(sys, choice, subdomains)


@dataclass
class SolveReport:
    stats: KrylovStats
    method: str
    precond: str
    inner_pcg_per_iteration: list[int] = field(default_factory=list)
    subdomain_seconds: float = 0.0
    interface_seconds: float = 0.0
    true_residual: float = np.nan
    precond_apply_seconds: float = 0.0  # one face-preconditioner application inside PCG
    pcg_per_solve: list[int] = field(default_factory=list)

    @property
    def median_pcg_per_solve(self) -> float:
        return float(np.median(self.pcg_per_solve)) if self.pcg_per_solve else 0.0

    @property
    def outer_iterations(self) -> int:
        return self.stats.iterations

    @property
    def avg_inner_pcg(self) -> float:
        if not self.inner_pcg_per_iteration:
            return 0.0
        return float(np.mean(self.inner_pcg_per_iteration))

    def csv_row(self, h, n_subdomains, theta):
        return {
            "h": h, "N": n_subdomains, "theta": theta, "precond": self.precond,
            "outer_iters": self.outer_iterations,
            "avg_inner_pcg": f"{self.avg_inner_pcg:.2f}",
            "subdomain_ms": f"{1e3 * self.subdomain_seconds:.3f}",
            "interface_ms": f"{1e3 * self.interface_seconds:.3f}",
        }


REPORT_COLUMNS = ("h", "N", "theta", "precond", "outer_iters", "avg_inner_pcg",
                  "subdomain_ms", "interface_ms")


def write_reports_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


class _CountingOperator:
    """Wraps a preconditioner and records PCG iterations spent per call."""

    def __init__(self, bp: BlockPreconditioner, norm: FractionalNorm | None):
        self.bp, self.norm = bp, norm
        self.per_call: list[int] = []
        self.per_solve: list[int] = []

    def __call__(self, v):
        before = len(self.norm.diagnostics.pcg_iterations) if self.norm else 0
        out = self.bp(v)
        if self.norm is not None:
            new = self.norm.diagnostics.pcg_iterations[before:]
            self.per_call.append(sum(new))
            self.per_solve.extend(new)
        return out


def _true_residual(sys, u):
    f = sys.f
    fn = np.linalg.norm(f)
    return np.linalg.norm(f - apply_system(sys, u)) / fn if fn else 0.0


def solve_global(sys: BlockSystem, precond: BlockPreconditioner, cfg: KrylovConfig = KrylovConfig(),
                 norm: FractionalNorm | None = None, x0=None):
    """Solve K u = f by (F)GMRES with the block preconditioner on the right.

    FGMRES is used when the interface block varies between applications.
    """
    op = _CountingOperator(precond, norm)
    sub = precond.subdomains
    s0, n0, i0 = sub.solve_seconds.copy(), sub.n_solves, precond.interface_seconds
    fp = getattr(norm, "fp", None)
    fp0 = (fp.apply_seconds, fp.n_applications) if fp is not None else (0.0, 0)
    krylov = fgmres if precond.varying else gmres
    u, stats = krylov(lambda x: apply_system(sys, x), sys.f, op, cfg, x0=x0)
    stats.inner_iteration_total = int(sum(op.per_call))
    calls = max(sub.n_solves - n0, 1)
    report = SolveReport(
        stats=stats, method="global", precond=precond.kind,
        inner_pcg_per_iteration=op.per_call, pcg_per_solve=op.per_solve,
        subdomain_seconds=float((sub.solve_seconds - s0).max(initial=0.0) / calls),
        interface_seconds=(precond.interface_seconds - i0) / max(len(op.per_call), 1),
        true_residual=_true_residual(sys, u),
    )
    if fp is not None and fp.n_applications > fp0[1]:
        report.precond_apply_seconds = (fp.apply_seconds - fp0[0]) / (fp.n_applications - fp0[1])
    return u, report


def solve_schur_sequence(sys: BlockSystem, precond: BlockPreconditioner,
                         cfg: KrylovConfig = KrylovConfig(), norm: FractionalNorm | None = None):
    """Interior solves, Krylov solve of the Schur system, back substitution."""
    sub = precond.subdomains
    u1 = sub.solve(list(sys.f_I))
    g = sys.f_G.copy()
    for K, x in zip(sys.K_IG, u1):
        g -= K.T @ x
    pcg_calls = []

    def interface_prec(v):
        before = len(norm.diagnostics.pcg_iterations) if norm else 0
        out = precond.interface_solve(v)
        if norm is not None:
            pcg_calls.append(sum(norm.diagnostics.pcg_iterations[before:]))
        return out

    if sys.n_interface:
        krylov = fgmres if precond.varying else gmres
        uG, stats = krylov(lambda v: schur_matvec(sys, v, sub), g, interface_prec, cfg)
    else:
        uG, stats = np.zeros(0), KrylovStats(converged=True, final_residual=0.0)
    stats.inner_iteration_total = int(sum(pcg_calls))
    u2 = sub.solve([-(K @ uG) for K in sys.K_IG])
    u = np.concatenate([a + b for a, b in zip(u1, u2)] + [uG])
    report = SolveReport(stats=stats, method="schur", precond=precond.kind,
                         inner_pcg_per_iteration=pcg_calls, true_residual=_true_residual(sys, u))
    return u, report
