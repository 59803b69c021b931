"""Q1 plane elasticity: element matrices, block assembly, loads and trace matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, Partition, StructuredMesh
from .sparse import as_csr

# reference-square corner coordinates, counter-clockwise from (-1, -1)
XI = np.array([-1.0, 1.0, 1.0, -1.0])
ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    model: str = "plane_stress"

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 1/2)")
        if self.model not in ("plane_stress", "plane_strain"):
            raise ValueError(f"unknown model {self.model!r}")


def lame_constants(material: Material) -> tuple[float, float]:
    """(mu, lambda) for the 2D model; plane stress uses 2 mu lam / (lam + 2 mu)."""
    E, nu = material.youngs_modulus, material.poisson_ratio
    mu = E / (2.0 * (1.0 + nu))
    lam = nu * E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    if material.model == "plane_stress":
        lam = 2.0 * mu * lam / (lam + 2.0 * mu)
    return mu, lam


def element_stiffness(h: float, material: Material) -> np.ndarray:
    """8x8 stiffness of a square Q1 element at unit density.

    Exact integrals of the bilinear shape-function gradient products; the
    element size cancels in 2D, ``h`` is accepted for interface symmetry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    mu, lam = lame_constants(material)
    xx = np.outer(XI, XI) * (1.0 + np.outer(ETA, ETA) / 3.0) / 4.0
    yy = np.outer(ETA, ETA) * (1.0 + np.outer(XI, XI) / 3.0) / 4.0
    xy = np.outer(XI, ETA) / 4.0  # int dN_a/dx dN_b/dy
    K = np.empty((8, 8))
    K[0::2, 0::2] = (lam + 2 * mu) * xx + mu * yy
    K[1::2, 1::2] = (lam + 2 * mu) * yy + mu * xx
    K[0::2, 1::2] = lam * xy + mu * xy.T
    K[1::2, 0::2] = lam * xy.T + mu * xy
    return K


@dataclass(frozen=True)
class BlockSystem:
    """Reordered stiffness blocks and load for the decomposed problem."""

    K_II: tuple[sp.csr_matrix, ...]
    K_IG: tuple[sp.csr_matrix, ...]
    K_GG: sp.csr_matrix
    f_I: tuple[np.ndarray, ...]
    f_G: np.ndarray
    offsets: np.ndarray = field(repr=False)

    @property
    def n_subdomains(self) -> int:
        return len(self.K_II)

    @property
    def n_interior(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_interface(self) -> int:
        return self.K_GG.shape[0]

    @property
    def n(self) -> int:
        return self.n_interior + self.n_interface

    @property
    def f(self) -> np.ndarray:
        return np.concatenate(list(self.f_I) + [self.f_G])

    def K_GI(self, i: int) -> sp.csr_matrix:
        return self.K_IG[i].T.tocsr()

    def split(self, u):
        """View a reduced vector as (list of interior parts, interface part)."""
        parts = [u[self.offsets[i]:self.offsets[i + 1]] for i in range(self.n_subdomains)]
        return parts, u[self.n_interior:]

    def monolithic(self) -> sp.csr_matrix:
        KII = sp.block_diag(self.K_II, format="csr") if self.n_interior else None
        if self.n_interface == 0:
            return as_csr(KII)
        if KII is None:
            return self.K_GG
        KIG = sp.vstack(self.K_IG)
        return as_csr(sp.bmat([[KII, KIG], [KIG.T, self.K_GG]]))

    def with_load(self, f: np.ndarray) -> "BlockSystem":
        parts, fG = self.split(np.asarray(f, dtype=np.float64))
        return BlockSystem(self.K_II, self.K_IG, self.K_GG,
                           tuple(p.copy() for p in parts), fG.copy(), self.offsets)


def _density_array(mesh: StructuredMesh, density) -> np.ndarray:
    rho = np.broadcast_to(np.asarray(density, dtype=np.float64), (mesh.n_elements,))
    if np.any(rho <= 0):
        raise ValueError("density must be strictly positive elementwise")
    return rho


def assemble_system(mesh: StructuredMesh, partition: Partition, dofmap: DofMap,
                    material: Material, density=1.0, load=None) -> BlockSystem:
    """Assemble K(rho) = sum rho_e K_e subdomain by subdomain, Dirichlet dofs eliminated.

    ``load`` is a vector over all 2 * n_nodes global dofs (see ``assemble_load``).
    """
    rho = _density_array(mesh, density)
    Ke = element_stiffness(mesh.h, material)
    edofs = dofmap.perm[mesh.element_dofs()]
    nI, nG = dofmap.n_interior, dofmap.n_interface
    KII, KIG = [], []
    gg_rows, gg_cols, gg_vals = [], [], []
    for i in range(partition.n_subdomains):
        elems = np.flatnonzero(partition.element_subdomain == i)
        ld = edofs[elems]
        rows = np.repeat(ld, 8, axis=1).ravel()
        cols = np.tile(ld, (1, 8)).ravel()
        vals = (rho[elems, None, None] * Ke[None]).ravel()
        keep = (rows >= 0) & (cols >= 0)
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        sl = dofmap.interior_slice(i)
        lo, ni = sl.start, sl.stop - sl.start
        r_int = (rows >= lo) & (rows < sl.stop)
        c_int = (cols >= lo) & (cols < sl.stop)
        r_gam, c_gam = rows >= nI, cols >= nI
        m = r_int & c_int
        KII.append(as_csr(sp.coo_matrix((vals[m], (rows[m] - lo, cols[m] - lo)), shape=(ni, ni))))
        m = r_int & c_gam
        KIG.append(as_csr(sp.coo_matrix((vals[m], (rows[m] - lo, cols[m] - nI)), shape=(ni, nG))))
        m = r_gam & c_gam
        gg_rows.append(rows[m] - nI)
        gg_cols.append(cols[m] - nI)
        gg_vals.append(vals[m])
    if nG:
        KGG = as_csr(sp.coo_matrix(
            (np.concatenate(gg_vals), (np.concatenate(gg_rows), np.concatenate(gg_cols))),
            shape=(nG, nG)))
    else:
        KGG = sp.csr_matrix((0, 0))
    f = np.zeros(dofmap.n_free) if load is None else dofmap.to_reduced(load)
    offsets = np.asarray(dofmap.interior_offsets)
    f_I = tuple(f[offsets[i]:offsets[i + 1]].copy() for i in range(partition.n_subdomains))
    return BlockSystem(tuple(KII), tuple(KIG), KGG, f_I, f[nI:].copy(), offsets)


@dataclass(frozen=True)
class LoadSpec:
    """Constant body force plus a constant traction on part of one edge.

    The traction interval is measured along the edge from its lower/left end;
    ``None`` means the whole edge.
    """

    body_force: tuple[float, float] = (0.0, -0.75)
    traction: tuple[float, float] = (-1.0, 0.0)  # unit outward traction on the left edge
    traction_edge: str | None = "left"
    traction_interval: tuple[float, float] | None = None


def assemble_load(mesh: StructuredMesh, load: LoadSpec, clamped=("right",)) -> np.ndarray:
    """Consistent nodal load over all 2 * n_nodes global dofs."""
    f = np.zeros(2 * mesh.n_nodes)
    bx, by = load.body_force
    if bx or by:
        nodes = mesh.element_nodes().ravel()
        share = mesh.element_area / 4.0
        np.add.at(f, 2 * nodes, bx * share)
        np.add.at(f, 2 * nodes + 1, by * share)
    gx, gy = load.traction
    if load.traction_edge is not None and (gx or gy):
        edge = load.traction_edge
        if edge in clamped:
            raise ValueError(f"traction applied on clamped edge {edge!r}")
        nodes = mesh.edge_nodes(edge)
        length = mesh.height if edge in ("left", "right") else mesh.width
        a, b = load.traction_interval or (0.0, length)
        if not 0.0 <= a <= b <= length + 1e-12:
            raise ValueError(f"traction interval {(a, b)} outside edge of length {length}")
        h = mesh.h
        for k in range(len(nodes) - 1):
            s0, s1 = k * h, (k + 1) * h
            lo, hi = max(a, s0), min(b, s1)
            if hi <= lo:
                continue
            # exact integrals of the two linear hat functions over [lo, hi]
            w1 = ((hi - s0) ** 2 - (lo - s0) ** 2) / (2 * h)
            w0 = (hi - lo) - w1
            for node, w in ((nodes[k], w0), (nodes[k + 1], w1)):
                f[2 * node] += gx * w
                f[2 * node + 1] += gy * w
    return f


@dataclass(frozen=True)
class TraceMatrices:
    """Scalar 1D mass and Laplacian matrices on the interface nodes."""

    M: sp.csr_matrix
    L: sp.csr_matrix


def interface_edges(mesh: StructuredMesh, partition: Partition, density=None):
    """Mesh edges lying on the interface, as (node_a, node_b) pairs.

    With ``density`` (one value per element) the mean density of the two
    elements sharing each edge is returned as well.
    """
    sub = partition.element_subdomain.reshape(mesh.ny, mesh.nx)
    rho = None if density is None else np.broadcast_to(
        np.asarray(density, dtype=np.float64), (mesh.n_elements,)).reshape(mesh.ny, mesh.nx)
    edges, weights = [], []
    # horizontal edges between element rows ey-1 and ey
    ey, ex = np.nonzero(sub[1:, :] != sub[:-1, :])
    a = mesh.node_index(ex, ey + 1)
    edges.append(np.column_stack([a, a + 1]))
    if rho is not None:
        weights.append(0.5 * (rho[ey, ex] + rho[ey + 1, ex]))
    # vertical edges between element columns ex-1 and ex
    ey, ex = np.nonzero(sub[:, 1:] != sub[:, :-1])
    a = mesh.node_index(ex + 1, ey)
    edges.append(np.column_stack([a, a + mesh.nx + 1]))
    if rho is not None:
        weights.append(0.5 * (rho[ey, ex] + rho[ey, ex + 1]))
    if rho is None:
        return np.concatenate(edges)
    return np.concatenate(edges), np.concatenate(weights)


def assemble_trace_matrices(mesh: StructuredMesh, partition: Partition,
                            dofmap: DofMap, density=None) -> TraceMatrices:
    """Linear-element M and L on the interface graph.

    Edges ending at a Dirichlet node keep their contribution on the free end
    (homogeneous Dirichlet elimination); ends on the Neumann boundary stay natural.
    A per-element ``density`` scales each edge by the mean density of its two
    neighbouring elements, so the pencil follows the local stiffness.
    """
    ns = len(dofmap.interface_nodes)
    if ns == 0:
        raise ValueError("empty interface: nothing to assemble")
    if density is not None and np.any(np.asarray(density) <= 0):
        raise ValueError("density must be positive")
    local = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local[dofmap.interface_nodes] = np.arange(ns)
    if density is None:
        raw = interface_edges(mesh, partition)
        w = np.ones(len(raw))
    else:
        raw, w = interface_edges(mesh, partition, density)
    edges = local[raw]
    h = mesh.h
    me = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    le = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    wr = np.repeat(w, 4)
    M = sp.coo_matrix(((np.tile(me.ravel(), len(edges)) * wr)[keep], (rows[keep], cols[keep])),
                      shape=(ns, ns))
    L = sp.coo_matrix(((np.tile(le.ravel(), len(edges)) * wr)[keep], (rows[keep], cols[keep])),
                      shape=(ns, ns))
    return TraceMatrices(as_csr(M), as_csr(L))


def compliance(u, f) -> float:
    u, f = np.asarray(u), np.asarray(f)
    if u.shape != f.shape:
        raise ValueError(f"dimension mismatch: u {u.shape} vs f {f.shape}")
    return float(f @ u)
