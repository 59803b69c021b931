"""Variable Thickness Sheet compliance minimisation with an OC density update."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import compliance, element_stiffness
from .interface import FractionalNormConfig
from .krylov import KrylovConfig
from .problem import Problem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DensityField:
    rho: np.ndarray
    lower: float
    upper: float
    volume: float
    areas: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.lower <= self.upper:
            raise ValueError("density bounds must satisfy 0 < lower <= upper")
        if self.rho.shape != self.areas.shape:
            raise ValueError("rho and areas must have the same shape")

    @classmethod
    def uniform(cls, n_elements, area, volume_fraction=0.5, lower=1e-3, upper=1.0, initial=None):
        areas = np.full(n_elements, float(area))
        volume = volume_fraction * n_elements * upper * area
        value = volume / (n_elements * area) if initial is None else initial
        return cls(np.full(n_elements, float(value)), lower, upper, volume, areas)

    @property
    def used_volume(self) -> float:
        return float(self.rho @ self.areas)

    def with_rho(self, rho) -> "DensityField":
        return replace(self, rho=np.asarray(rho, dtype=np.float64))


@dataclass(frozen=True)
class OcConfig:
    move: float = 0.2
    damping: float = 0.5
    bisection_tol: float = 1e-6
    tol: float = 1e-2
    max_iter: int = 100

    def __post_init__(self):
        if not 0.0 <= self.move:
            raise ValueError("move limit must be nonnegative")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping exponent must lie in (0, 1]")


def sensitivity(u_global, Ke, element_dofs):
    """d(f^T u)/d(rho_e) = -u_e^T K_e u_e for each element."""
    ue = np.asarray(u_global)[element_dofs]
    return -np.einsum("ei,ij,ej->e", ue, Ke, ue)


def oc_update(field_: DensityField, sens, cfg: OcConfig) -> DensityField:
    """Optimality Criteria step with the volume multiplier found by bisection."""
    sens = np.asarray(sens, dtype=np.float64)
    if np.any(sens > 0):
        raise ValueError("compliance sensitivities must be nonpositive")
    rho, areas = field_.rho, field_.areas
    lo = np.maximum(field_.lower, rho - cfg.move)
    hi = np.minimum(field_.upper, rho + cfg.move)
    if hi @ areas <= field_.volume:
        return field_.with_rho(hi)
    if lo @ areas > field_.volume:
        raise ValueError("volume constraint unreachable within the move limit")
    if not np.any(sens < 0):
        raise ValueError("volume multiplier bisection failed: all sensitivities are zero")

    drive = -sens / areas

    def candidate(lmbda):
        return np.clip(rho * (drive / lmbda) ** cfg.damping, lo, hi)

    # bracket in log space: volume(l1) > V >= volume(l2)
    l1, l2 = 1e-30, float(np.max(drive) + 1.0)
    while candidate(l2) @ areas > field_.volume:
        l2 *= 10.0
    vols = []
    while (l2 - l1) > cfg.bisection_tol * l2:
        mid = np.sqrt(l1 * l2) if l2 / l1 > 10.0 else 0.5 * (l1 + l2)
        vol = candidate(mid) @ areas
        vols.append((mid, vol))
        if vol > field_.volume:
            l1 = mid
        else:
            l2 = mid
    vols.sort()
    assert all(a[1] >= b[1] - 1e-12 for a, b in zip(vols, vols[1:])), "volume not monotone in multiplier"
    return field_.with_rho(candidate(l2))


def adaptive_tolerance(history, tol_min=1e-8, tol_max=1e-4, scale=0.1):
    """GMRES tolerance from the relative change between the last two compliances."""
    if len(history) < 2:
        return tol_max
    c1, c0 = history[-1], history[-2]
    rel = abs(c1 - c0) / max(abs(c1), np.finfo(float).tiny)
    return float(np.clip(rel * scale, tol_min, tol_max))


@dataclass
class TopOptReport:
    iterations: int = 0
    converged: bool = False
    compliance: list[float] = field(default_factory=list)
    gmres_iterations: list[int] = field(default_factory=list)
    tolerances: list[float] = field(default_factory=list)
    changes: list[float] = field(default_factory=list)
    volumes: list[float] = field(default_factory=list)
    density: DensityField | None = None
    u: np.ndarray | None = None

    @property
    def avg_gmres(self) -> float:
        return float(np.mean(self.gmres_iterations)) if self.gmres_iterations else 0.0

    def summary(self) -> str:
        return f"{self.iterations} ({round(self.avg_gmres)})"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "compliance", "gmres_iters", "gmres_tol", "max_change", "volume"])
            for k, row in enumerate(zip(self.compliance, self.gmres_iterations, self.tolerances,
                                        self.changes, self.volumes)):
                w.writerow([k + 1, *(repr(float(x)) if isinstance(x, float) else x for x in row)])


def run_topopt(problem: Problem, oc: OcConfig = OcConfig(), precond="hnorm",
               norm_cfg: FractionalNormConfig | None = None, density: DensityField | None = None,
               volume_fraction=0.5, tol_bounds=(1e-8, 1e-4), tol_scale=0.1, warm_start=True,
               weighted_norm=True, callback=None) -> TopOptReport:
    """Fixed-point loop: decomposed FEA, OC update, convergence check.

    With ``weighted_norm`` the interface pencil is rebuilt from the current
    density every step; otherwise one geometric norm is reused throughout.
    """
    mesh = problem.mesh
    if density is None:
        density = DensityField.uniform(mesh.n_elements, mesh.element_area, volume_fraction)
    Ke = element_stiffness(mesh.h, problem.spec.material)
    edofs = mesh.element_dofs()
    norm_cfg = norm_cfg or FractionalNormConfig()
    norm = None
    if precond == "hnorm" and not weighted_norm:
        norm = problem.fractional_norm(norm_cfg)
    report = TopOptReport()
    u = None
    for step in range(oc.max_iter):
        tol = adaptive_tolerance(report.compliance, *tol_bounds, scale=tol_scale)
        if precond == "hnorm" and weighted_norm:
            norm = problem.fractional_norm(norm_cfg, density.rho)
        u, sol, sys, norm = problem.solve(precond, krylov_cfg=KrylovConfig(tol=tol),
                                          density=density.rho, norm=norm,
                                          x0=u if warm_start else None)
        if not sol.stats.converged:
            report.density = density
            raise RuntimeError(f"FEA failed to converge at step {step + 1} "
                               f"(residual {sol.true_residual:.2e})")
        c = compliance(u, sys.f)
        ug = problem.dofmap.to_global(u)
        sens = sensitivity(ug, Ke, edofs)
        new = oc_update(density, sens, oc)
        change = float(np.max(np.abs(new.rho - density.rho)))
        report.compliance.append(c)
        report.gmres_iterations.append(sol.outer_iterations)
        report.tolerances.append(tol)
        report.changes.append(change)
        report.volumes.append(new.used_volume)
        report.iterations = step + 1
        log.info("step %d: compliance %.6g, gmres %d (tol %.1e), change %.3g",
                 step + 1, c, sol.outer_iterations, tol, change)
        if callback is not None:
            callback(step + 1, new, u)
        density = new
        if change <= oc.tol:
            report.converged = True
            break
    report.density = density
    report.u = u
    return report
