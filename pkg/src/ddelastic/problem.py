"""Cantilever problem setup shared by the CLI, the optimiser and the tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .fem import (LoadSpec, Material, TraceMatrices, assemble_load, assemble_system,
                  assemble_trace_matrices)
from .interface import FacePreconditioner, FractionalNorm, FractionalNormConfig
from .krylov import KrylovConfig
from .mesh import (BoundaryConditions, DofMap, InterfaceTopology, Partition, StructuredMesh,
                   build_mesh, classify_dofs, interface_topology, partition_mesh)
from .solver import Subdomains, make_preconditioner, solve_global


@dataclass(frozen=True)
class ProblemSpec:
    h: float = 1 / 32
    px: int = 2
    py: int = 2
    extents: tuple[float, float] = (2.0, 1.0)
    material: Material = field(default_factory=Material)
    load: LoadSpec = field(default_factory=LoadSpec)
    bc: BoundaryConditions = field(default_factory=BoundaryConditions)


class Problem:
    """Geometry, dof bookkeeping, load and interface pencil for one ProblemSpec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.mesh: StructuredMesh = build_mesh(spec.extents, spec.h)
        self.partition: Partition = partition_mesh(self.mesh, spec.px, spec.py)
        self.dofmap: DofMap = classify_dofs(self.mesh, self.partition, spec.bc)
        self.topology: InterfaceTopology = interface_topology(self.mesh, self.partition, self.dofmap)
        self.load = assemble_load(self.mesh, spec.load, spec.bc.clamped)

    @property
    def n_subdomains(self) -> int:
        return self.partition.n_subdomains

    def system(self, density=1.0):
        return assemble_system(self.mesh, self.partition, self.dofmap, self.spec.material,
                               density, self.load)

    @cached_property
    def trace(self) -> TraceMatrices:
        return assemble_trace_matrices(self.mesh, self.partition, self.dofmap)

    @cached_property
    def face_preconditioner(self) -> FacePreconditioner:
        return FacePreconditioner(self.trace.L, self.topology)

    def fractional_norm(self, cfg: FractionalNormConfig, density=None) -> FractionalNorm:
        """Interface norm from the geometric pencil, or a density-weighted one."""
        if density is None:
            trace = self.trace
            fp = self.face_preconditioner if cfg.mode != "dense" else None
        else:
            trace = assemble_trace_matrices(self.mesh, self.partition, self.dofmap, density)
            fp = FacePreconditioner(trace.L, self.topology) if cfg.mode != "dense" else None
        return FractionalNorm(trace.M, trace.L, cfg, fp)

    def solve(self, precond="hnorm", norm_cfg: FractionalNormConfig | None = None,
              krylov_cfg: KrylovConfig = KrylovConfig(), density=1.0, x0=None, norm=None,
              workers=None):
        """Assemble, build the chosen preconditioner and run the global solve.

        Returns ``(u_reduced, report, system, norm)``.
        """
        sys = self.system(density)
        if precond == "hnorm" and norm is None:
            norm = self.fractional_norm(norm_cfg or FractionalNormConfig())
        if precond != "hnorm":
            norm = None
        sub = Subdomains(sys, workers)
        bp = make_preconditioner(sys, precond, norm, sub)
        u, report = solve_global(sys, bp, krylov_cfg, norm, x0=x0)
        return u, report, sys, norm

    def reference_solution(self, density=1.0) -> np.ndarray:
        """Monolithic sparse direct solve (SuperLU), independent of the DD path."""
        from scipy.sparse.linalg import spsolve
        sys = self.system(density)
        return spsolve(sys.monolithic().tocsc(), sys.f)
