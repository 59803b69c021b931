"""Structured quadrilateral meshes, box partitions and dof classification."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

EDGES = ("left", "right", "bottom", "top")

# dof kinds stored in DofMap.kind (values >= 0 are subdomain indices)
INTERFACE = -1
DIRICHLET = -2


def _as_count(length, h, what):
    ratio = Fraction(length).limit_denominator(10**9) / Fraction(h).limit_denominator(10**9)
    if ratio.denominator != 1 or ratio < 1:
        raise ValueError(f"{what} extent {length} is not an integer multiple of h={h}")
    n = int(ratio)
    if abs(n * float(h) - float(length)) > 1e-12 * max(1.0, float(length)):
        raise ValueError(f"{what} extent {length} is not an integer multiple of h={h}")
    return n


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform grid of square bilinear elements on (0, width) x (0, height).

    Node ``(ix, iy)`` has index ``iy * (nx + 1) + ix``; element ``(ex, ey)``
    has index ``ey * nx + ex`` and counter-clockwise corner nodes starting at
    the lower-left one.
    """

    width: float
    height: float
    h: float
    nx: int
    ny: int

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def element_area(self) -> float:
        return self.h * self.h

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.nx + 1) + np.asarray(ix)

    def node_coords(self) -> np.ndarray:
        iy, ix = np.divmod(np.arange(self.n_nodes), self.nx + 1)
        return np.column_stack([ix * self.h, iy * self.h])

    def element_nodes(self) -> np.ndarray:
        ey, ex = np.divmod(np.arange(self.n_elements), self.nx)
        n0 = self.node_index(ex, ey)
        row = self.nx + 1
        return np.column_stack([n0, n0 + 1, n0 + 1 + row, n0 + row])

    def element_dofs(self) -> np.ndarray:
        """Global dofs per element, ordered (u0x, u0y, u1x, u1y, ...)."""
        nodes = self.element_nodes()
        return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)

    def edge_nodes(self, edge: str) -> np.ndarray:
        if edge == "left":
            return self.node_index(0, np.arange(self.ny + 1))
        if edge == "right":
            return self.node_index(self.nx, np.arange(self.ny + 1))
        if edge == "bottom":
            return self.node_index(np.arange(self.nx + 1), 0)
        if edge == "top":
            return self.node_index(np.arange(self.nx + 1), self.ny)
        raise ValueError(f"unknown edge {edge!r}; expected one of {EDGES}")


def build_mesh(extents, h) -> StructuredMesh:
    """Build a structured mesh; ``h`` may be a float, Fraction or ``"1/32"``."""
    width, height = extents
    h = Fraction(h) if isinstance(h, str) else h
    if float(h) <= 0:
        raise ValueError("h must be positive")
    nx = _as_count(width, h, "width")
    ny = _as_count(height, h, "height")
    return StructuredMesh(float(width), float(height), float(h), nx, ny)


@dataclass(frozen=True)
class Partition:
    px: int
    py: int
    element_subdomain: np.ndarray = field(repr=False)

    @property
    def n_subdomains(self) -> int:
        return self.px * self.py


def partition_mesh(mesh: StructuredMesh, px: int, py: int) -> Partition:
    """Split the mesh into a px x py grid of equal rectangular subdomains."""
    if px < 1 or py < 1 or mesh.nx % px or mesh.ny % py:
        raise ValueError(
            f"partition {px}x{py} does not divide the {mesh.nx}x{mesh.ny} element grid"
        )
    ey, ex = np.divmod(np.arange(mesh.n_elements), mesh.nx)
    sub = (ey // (mesh.ny // py)) * px + ex // (mesh.nx // px)
    sub.setflags(write=False)
    return Partition(px, py, sub)


def square_partition(n_subdomains: int) -> tuple[int, int]:
    """Most nearly square (px, py) with px >= py and px * py = n_subdomains."""
    py = int(np.sqrt(n_subdomains))
    while n_subdomains % py:
        py -= 1
    return n_subdomains // py, py


@dataclass(frozen=True)
class BoundaryConditions:
    """Edges on which both displacement components are clamped."""

    clamped: tuple[str, ...] = ("right",)

    def __post_init__(self):
        if not self.clamped:
            raise ValueError("at least one clamped edge is required")
        for e in self.clamped:
            if e not in EDGES:
                raise ValueError(f"unknown edge {e!r}; expected one of {EDGES}")

    def dirichlet_nodes(self, mesh: StructuredMesh) -> np.ndarray:
        return np.unique(np.concatenate([mesh.edge_nodes(e) for e in self.clamped]))


def node_subdomains(mesh: StructuredMesh, partition: Partition):
    """Return (count of distinct subdomains per node, one owning subdomain per node)."""
    enodes = mesh.element_nodes()
    pairs = np.column_stack(
        [enodes.ravel(), np.repeat(partition.element_subdomain, 4)]
    )
    pairs = np.unique(pairs, axis=0)
    counts = np.bincount(pairs[:, 0], minlength=mesh.n_nodes)
    owner = np.empty(mesh.n_nodes, dtype=np.int64)
    owner[pairs[:, 0]] = pairs[:, 1]
    return counts, owner


@dataclass(frozen=True)
class DofMap:
    """Classification and renumbering of the 2 * n_nodes displacement dofs.

    The reduced numbering puts interior dofs first, grouped by subdomain, then
    interface dofs blocked by component: all x-components of the interface
    nodes followed by all y-components.
    """

    n_nodes: int
    kind: np.ndarray = field(repr=False)  # per global dof
    perm: np.ndarray = field(repr=False)  # global dof -> reduced index, -1 if Dirichlet
    order: np.ndarray = field(repr=False)  # reduced index -> global dof
    interior_offsets: np.ndarray = field(repr=False)
    interface_nodes: np.ndarray = field(repr=False)

    @property
    def n_subdomains(self) -> int:
        return len(self.interior_offsets) - 1

    @property
    def n_interior(self) -> int:
        return int(self.interior_offsets[-1])

    @property
    def n_interface(self) -> int:
        return 2 * len(self.interface_nodes)

    @property
    def n_free(self) -> int:
        return self.n_interior + self.n_interface

    def interior_slice(self, i: int) -> slice:
        return slice(int(self.interior_offsets[i]), int(self.interior_offsets[i + 1]))

    def to_global(self, u_reduced: np.ndarray) -> np.ndarray:
        """Scatter a reduced vector to all 2 * n_nodes dofs (Dirichlet dofs = 0)."""
        u = np.zeros(2 * self.n_nodes)
        u[self.order] = u_reduced
        return u

    def to_reduced(self, u_global: np.ndarray) -> np.ndarray:
        return np.asarray(u_global)[self.order]


def classify_dofs(mesh: StructuredMesh, partition: Partition, bc: BoundaryConditions) -> DofMap:
    counts, owner = node_subdomains(mesh, partition)
    dirichlet = np.zeros(mesh.n_nodes, dtype=bool)
    dirichlet[bc.dirichlet_nodes(mesh)] = True
    if not dirichlet.any():
        raise ValueError("empty Dirichlet set: the elasticity operator would be singular")

    node_kind = np.where(counts >= 2, INTERFACE, owner)
    node_kind[dirichlet] = DIRICHLET
    kind = np.repeat(node_kind, 2)

    interior_groups = []
    offsets = [0]
    for i in range(partition.n_subdomains):
        dofs = np.flatnonzero(kind == i)
        interior_groups.append(dofs)
        offsets.append(offsets[-1] + len(dofs))
    iface_nodes = np.flatnonzero(node_kind == INTERFACE)
    iface_dofs = np.concatenate([2 * iface_nodes, 2 * iface_nodes + 1])
    order = np.concatenate(interior_groups + [iface_dofs]).astype(np.int64)

    perm = np.full(2 * mesh.n_nodes, -1, dtype=np.int64)
    perm[order] = np.arange(len(order))
    for a in (kind, perm, order, iface_nodes):
        a.setflags(write=False)
    return DofMap(mesh.n_nodes, kind, perm, order, np.asarray(offsets), iface_nodes)


@dataclass(frozen=True)
class InterfaceTopology:
    """Faces and cross points of the interface.

    Node lists hold positions into ``DofMap.interface_nodes`` (scalar interface
    indices), not mesh node numbers.
    """

    faces: tuple[np.ndarray, ...]
    face_subdomains: tuple[tuple[int, int], ...]
    cross_points: np.ndarray
    n_scalar: int

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def interface_topology(mesh: StructuredMesh, partition: Partition, dofmap: DofMap) -> InterfaceTopology:
    inodes = dofmap.interface_nodes
    if len(inodes) == 0:
        return InterfaceTopology((), (), np.empty(0, dtype=np.int64), 0)

    enodes = mesh.element_nodes()
    pairs = np.unique(
        np.column_stack([enodes.ravel(), np.repeat(partition.element_subdomain, 4)]), axis=0
    )
    local = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local[inodes] = np.arange(len(inodes))
    pairs = pairs[local[pairs[:, 0]] >= 0]
    subs_of = [[] for _ in inodes]
    for node, s in pairs:
        subs_of[local[node]].append(int(s))

    coords = mesh.node_coords()[inodes]
    cross = [j for j, s in enumerate(subs_of) if len(s) > 2]
    by_pair: dict[tuple[int, int], list[int]] = {}
    for j, s in enumerate(subs_of):
        if len(s) == 2:
            by_pair.setdefault(tuple(sorted(s)), []).append(j)

    faces, face_subs = [], []
    for key in sorted(by_pair):
        idx = np.asarray(by_pair[key])
        xy = coords[idx]
        # a face is either vertical (constant x) or horizontal (constant y)
        axis = 1 if np.ptp(xy[:, 0]) < 0.5 * mesh.h else 0
        idx = idx[np.argsort(xy[:, axis], kind="stable")]
        pos = coords[idx, axis]
        breaks = np.flatnonzero(np.diff(pos) > 1.5 * mesh.h) + 1
        for run in np.split(idx, breaks):
            run.setflags(write=False)
            faces.append(run)
            face_subs.append(key)
    cross = np.asarray(cross, dtype=np.int64)
    cross.setflags(write=False)
    return InterfaceTopology(tuple(faces), tuple(face_subs), cross, len(inodes))
