"""P1 finite element operators on the bulk triangulation and on its boundary polygon."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConfigurationError, ModelError
from .geometry import BulkSurfaceMesh

MIN_ELEMENT_AREA = 1e-14

# 3-point edge-midpoint rule on triangles (barycentric coordinates), exact for quadratics.
_TRI_QUAD_POINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_QUAD_WEIGHTS = np.full(3, 1.0 / 3.0)
# Simpson rule on edges, exact for cubics.
_EDGE_QUAD_POINTS = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
_EDGE_QUAD_WEIGHTS = np.array([1.0, 4.0, 1.0]) / 6.0


@dataclass(frozen=True, eq=False)
class FeOperators:
    M_bulk: sp.csr_matrix
    M_bulk_lumped: np.ndarray
    A_bulk: sp.csr_matrix
    M_surf: sp.csr_matrix
    M_surf_lumped: np.ndarray
    A_surf: sp.csr_matrix
    T: sp.csr_matrix
    grads: np.ndarray = field(repr=False)
    quadrature_rule: str = "P1-exact/lumped-nodal/midpoint-3"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_bulk(self) -> int:
        return self.M_bulk.shape[0]

    @property
    def n_surf(self) -> int:
        return self.M_surf.shape[0]

    @property
    def n(self) -> int:
        return self.n_bulk + self.n_surf

    @property
    def area(self) -> float:
        return float(self.M_bulk_lumped.sum())

    @property
    def perimeter(self) -> float:
        return float(self.M_surf_lumped.sum())

    def block_mass(self) -> sp.csr_matrix:
        """Consistent mass of the product space L2(Omega) x L2(Gamma)."""
        if "M" not in self._cache:
            self._cache["M"] = sp.block_diag([self.M_bulk, self.M_surf], format="csr")
        return self._cache["M"]

    def block_lumped(self) -> np.ndarray:
        return np.concatenate([self.M_bulk_lumped, self.M_surf_lumped])

    def block_stiffness(self, bulk_scale=1.0, surf_scale=1.0) -> sp.csr_matrix:
        return sp.block_diag([bulk_scale * self.A_bulk, surf_scale * self.A_surf], format="csr")

    def coupling_block(self, coef: float) -> sp.csr_matrix:
        """Matrix of ``(phi, psi), (zeta, xi) -> int_Gamma (coef psi - phi)(coef xi - zeta)``.

        Uses lumped (nodal) surface quadrature.
        """
        key = ("coupling", float(coef))
        if key not in self._cache:
            D = sp.diags(self.M_surf_lumped)
            Tt = self.T.T
            top = sp.hstack([Tt @ D @ self.T, -coef * (Tt @ D)])
            bot = sp.hstack([-coef * (D @ self.T), coef**2 * D])
            self._cache[key] = sp.vstack([top, bot], format="csr")
        return self._cache[key]

    def restriction(self, coef: float) -> sp.csr_matrix:
        """Map reduced coordinates ``(phi_interior, psi)`` onto pairs with ``phi|_Gamma = coef * psi``.

        Columns of the returned ``(n, n - n_surf)`` matrix span the discrete space D_coef.
        """
        key = ("restriction", float(coef))
        if key not in self._cache:
            nb, ns = self.n_bulk, self.n_surf
            trace = self.T.indices  # T has exactly one entry per row
            interior = np.setdiff1d(np.arange(nb), trace)
            n_red = len(interior) + ns
            rows = np.concatenate([interior, trace, nb + np.arange(ns)])
            cols = np.concatenate([np.arange(len(interior)),
                                   len(interior) + np.arange(ns),
                                   len(interior) + np.arange(ns)])
            vals = np.concatenate([np.ones(len(interior)), np.full(ns, float(coef)), np.ones(ns)])
            P = sp.csr_matrix((vals, (rows, cols)), shape=(nb + ns, n_red))
            self._cache[key] = P
        return self._cache[key]


def _element_gradients(mesh: BulkSurfaceMesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]  # (F, 3, 2)
    area = mesh.element_areas
    bad = np.flatnonzero(area < MIN_ELEMENT_AREA)
    if len(bad):
        raise AssemblyError(f"degenerate element {int(bad[0])} with area {area[bad[0]]:.3e}")
    # grad of barycentric lambda_i = rot90(opposite edge) / (2 area)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    g = np.stack([e0, e1, e2], axis=1)
    grads = np.stack([-g[..., 1], g[..., 0]], axis=-1) / (2.0 * area)[:, None, None]
    return grads


def _bulk_matrix(mesh, local):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_bulk
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _surf_matrix(ns, local):
    j = np.arange(ns)
    e = np.column_stack([j, (j + 1) % ns])
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ns, ns)).tocsr()
    A.sum_duplicates()
    return A


def _bulk_stiffness_local(grads, area, weight=None):
    local = np.einsum("eid,ejd->eij", grads, grads) * area[:, None, None]
    if weight is not None:
        local *= weight[:, None, None]
    return local


def _surf_stiffness_local(lengths, weight=None):
    w = 1.0 / lengths if weight is None else weight / lengths
    return w[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])


def assemble_operators(mesh: BulkSurfaceMesh) -> FeOperators:
    """Assemble mass, lumped mass, stiffness and trace operators for bulk and surface."""
    grads = _element_gradients(mesh)
    area = mesh.element_areas
    M_local = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    M_bulk = _bulk_matrix(mesh, M_local)
    A_bulk = _bulk_matrix(mesh, _bulk_stiffness_local(grads, area))
    lumped_b = np.zeros(mesh.n_bulk)
    np.add.at(lumped_b, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))

    ns = mesh.n_surf
    ell = mesh.edge_lengths
    if np.any(ell < MIN_ELEMENT_AREA):
        bad = int(np.argmin(ell))
        raise AssemblyError(f"degenerate boundary edge {bad} with length {ell[bad]:.3e}")
    M_surf = _surf_matrix(ns, ell[:, None, None] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]))
    A_surf = _surf_matrix(ns, _surf_stiffness_local(ell))
    lumped_s = 0.5 * (ell + np.roll(ell, 1))

    T = sp.csr_matrix((np.ones(ns), (np.arange(ns), mesh.trace_map)), shape=(ns, mesh.n_bulk))
    grads.setflags(write=False)
    return FeOperators(M_bulk=M_bulk, M_bulk_lumped=lumped_b, A_bulk=A_bulk,
                       M_surf=M_surf, M_surf_lumped=lumped_s, A_surf=A_surf, T=T, grads=grads)


def weighted_stiffness(ops: FeOperators, mesh: BulkSurfaceMesh, weight_bulk, weight_surf):
    """Stiffness matrices weighted by the element mean of positive nodal weights."""
    weight_bulk = np.asarray(weight_bulk, dtype=float)
    weight_surf = np.asarray(weight_surf, dtype=float)
    if np.any(weight_bulk <= 0) or np.any(weight_surf <= 0):
        raise ModelError("mobility weights must be strictly positive (lower mobility bound violated)")
    wb = weight_bulk[mesh.triangles].mean(axis=1)
    ws = 0.5 * (weight_surf + np.roll(weight_surf, -1))
    A_b = _bulk_matrix(mesh, _bulk_stiffness_local(ops.grads, mesh.element_areas, wb))
    A_s = _surf_matrix(mesh.n_surf, _surf_stiffness_local(mesh.edge_lengths, ws))
    return A_b, A_s


@dataclass(frozen=True, eq=False)
class VelocitySample:
    """Nodal bulk velocity ``v`` and tangential surface velocity ``w``.

    For a per-step table, ``table`` holds a sequence of ``(v_nodes, w_nodes)``
    pairs; step ``n`` uses entry ``min(n, len(table) - 1)``.
    """
    v_nodes: np.ndarray
    w_nodes: np.ndarray
    time_dependence: str = "steady"
    table: tuple = ()
    name: str = "custom"

    def at(self, step: int) -> "VelocitySample":
        if self.time_dependence == "steady" or not self.table:
            return self
        v, w = self.table[min(step, len(self.table) - 1)]
        return VelocitySample(np.asarray(v, float), np.asarray(w, float), name=self.name)

    @property
    def is_zero(self) -> bool:
        if self.time_dependence != "steady":
            return all(not np.any(v) and not np.any(w) for v, w in self.table)
        return not np.any(self.v_nodes) and not np.any(self.w_nodes)


def check_velocity(vel: VelocitySample, mesh: BulkSurfaceMesh, tol: float = 1e-12) -> float:
    """Return the largest ``|w . n|`` at surface vertices; raise if it exceeds ``tol``.

    Warns (does not raise) when the discrete divergence of ``v`` is not small.
    """
    samples = vel.table if vel.time_dependence != "steady" and vel.table else [(vel.v_nodes, vel.w_nodes)]
    worst = 0.0
    grads = _element_gradients(mesh)
    for v, w in samples:
        v = np.asarray(v, float)
        w = np.asarray(w, float)
        if v.shape != (mesh.n_bulk, 2) or w.shape != (mesh.n_surf, 2):
            raise ConfigurationError("velocity arrays do not match the mesh dof counts")
        wn = np.abs((w * mesh.vertex_normals).sum(axis=1)).max()
        worst = max(worst, float(wn))
        div = np.einsum("eid,eid->e", grads, v[mesh.triangles])
        if np.abs(div).max() > 1e-8:
            warnings.warn(f"bulk velocity has discrete divergence up to {np.abs(div).max():.2e}",
                          stacklevel=2)
    if worst > tol:
        raise ConfigurationError(f"surface velocity is not tangential: max |w.n| = {worst:.3e}")
    return worst


def builtin_velocity(name: str, mesh: BulkSurfaceMesh, gamma: float = 1.0, sigma: float = 1.0) -> VelocitySample:
    """Built-in prescribed velocities: ``zero``, ``rotation`` (rate ``gamma``), ``surface_slide`` (speed ``sigma``)."""
    nb, ns = mesh.n_bulk, mesh.n_surf
    if name == "zero":
        return VelocitySample(np.zeros((nb, 2)), np.zeros((ns, 2)), name="zero")
    if name == "rotation":
        if mesh.shape != "unit_disk":
            raise ConfigurationError("rotation velocity is only tangential on the unit disk")
        x = mesh.vertices
        v = gamma * np.column_stack([-x[:, 1], x[:, 0]])
        return VelocitySample(v, v[mesh.trace_map].copy(), name=f"rotation({gamma:g})")
    if name == "surface_slide":
        w = sigma * mesh.vertex_tangents
        return VelocitySample(np.zeros((nb, 2)), w, name=f"surface_slide({sigma:g})")
    raise ConfigurationError(f"unknown velocity {name!r}; expected zero, rotation or surface_slide")


def convection_load(ops: FeOperators, mesh: BulkSurfaceMesh, field_bulk, field_surf, vel: VelocitySample):
    """Load vectors ``b_bulk[i] = int phi v . grad zeta_i`` and ``b_surf[j] = int psi w . grad_Gamma xi_j``."""
    field_bulk = np.asarray(field_bulk, float)
    field_surf = np.asarray(field_surf, float)
    tri = mesh.triangles
    # bulk: sum_q w_q phi(x_q) v(x_q), then dotted with constant gradients
    phi_q = _TRI_QUAD_POINTS @ field_bulk[tri].T  # (3q, F)
    v_el = vel.v_nodes[tri]  # (F, 3, 2)
    v_q = np.einsum("qa,ead->qed", _TRI_QUAD_POINTS, v_el)  # (3q, F, 2)
    flux = np.einsum("q,qe,qed->ed", _TRI_QUAD_WEIGHTS, phi_q, v_q) * mesh.element_areas[:, None]
    local = np.einsum("ed,eid->ei", flux, ops.grads)
    b_bulk = np.zeros(mesh.n_bulk)
    np.add.at(b_bulk, tri.ravel(), local.ravel())

    ns = mesh.n_surf
    j = np.arange(ns)
    e = np.column_stack([j, (j + 1) % ns])
    ell = mesh.edge_lengths
    tang = (mesh.surface_points[e[:, 1]] - mesh.surface_points[e[:, 0]]) / ell[:, None]
    psi_q = _EDGE_QUAD_POINTS @ field_surf[e].T  # (q, E)
    wt = np.einsum("ead,ed->ea", vel.w_nodes[e], tang)
    wt_q = _EDGE_QUAD_POINTS @ wt.T  # (q, E)
    integ = (_EDGE_QUAD_WEIGHTS[:, None] * psi_q * wt_q).sum(axis=0)  # int_e psi w.t ds / ell
    # grad_Gamma xi along the edge: -1/ell at the start vertex, +1/ell at the end vertex
    b_surf = np.zeros(ns)
    np.add.at(b_surf, e[:, 0], -integ)
    np.add.at(b_surf, e[:, 1], integ)
    return b_bulk, b_surf


def dump_coo(matrix, path) -> None:
    """Write a sparse matrix as ``row col value`` text, one nonzero per line."""
    C = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for r, c, v in zip(C.row, C.col, C.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def dump_operators(ops: FeOperators, directory) -> list:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("M_bulk", "A_bulk", "M_surf", "A_surf", "T"):
        p = directory / f"{name}.coo.txt"
        dump_coo(getattr(ops, name), p)
        written.append(p)
    return written

