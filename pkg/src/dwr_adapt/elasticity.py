"""Small-strain plane elasticity with an active fibre pre-stress.

The primal problem is a(u, v) = l_E(v) + l_A(v) with

    a(u, v)  = int sigma(u) : eps(v)
    l_E(v)   = int B . v + int_{Gamma_N} B_N . v
    l_A(v)   = -beta T int_{omega_A} (eps(v) e_A) . e_A

and the active stress sigma_A(u) = sigma(u) + beta T e_A (x) e_A chi_A.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .fem.assembly import (CellQuadrature, SparseSystem, assemble_matrix, assemble_vector, condense,
                           edge_quadrature, edge_reference_points, solve)
from .fem.space import Field, Space
from .mesh import Mesh


@dataclass(frozen=True)
class LinearMaterial:
    """Isotropic material keyed by region tag.

    By default the region is the cell's mesh tag (piecewise constant per
    cell).  With a ``locator`` (points (..., 2) -> region tags) the material
    is sampled at the points of a fixed cell quadrature of order
    ``sample_order`` instead, so material interfaces need not be resolved
    by the mesh.  Every integral involving the stress then uses that rule.
    """

    E: Mapping[int, float]
    nu: Mapping[int, float]
    plane_strain: bool = True
    locator: Callable | None = None
    sample_order: int = 4

    def __post_init__(self):
        for tag, e in self.E.items():
            if not e > 0:
                raise ValueError(f"E must be positive (region {tag})")
        for tag, n in self.nu.items():
            if not 0 <= n < 0.5:
                raise ValueError(f"nu must lie in [0, 0.5) (region {tag})")

    @classmethod
    def uniform(cls, E: float, nu: float, regions=(0,), plane_strain: bool = True):
        return cls({r: E for r in regions}, {r: nu for r in regions}, plane_strain)

    @property
    def sampled(self) -> bool:
        return self.locator is not None

    def _lame_of_tags(self, region: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tags = np.unique(region)
        missing = [int(t) for t in tags if t not in self.E or t not in self.nu]
        if missing:
            raise KeyError(f"no material for region tags {missing}")
        lut_E = {int(t): self.E[int(t)] for t in tags}
        lut_nu = {int(t): self.nu[int(t)] for t in tags}
        E = np.vectorize(lut_E.__getitem__, otypes=[float])(region) if region.size else np.zeros(region.shape)
        nu = np.vectorize(lut_nu.__getitem__, otypes=[float])(region) if region.size else np.zeros(region.shape)
        mu = E / (2 * (1 + nu))
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        if not self.plane_strain:
            lam = 2 * mu * lam / (lam + 2 * mu)
        return mu, lam

    def lame(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (mu, lambda) from the mesh region tags."""
        return self._lame_of_tags(np.asarray(mesh.region))

    def tensor(self, mesh: Mesh) -> np.ndarray:
        """(NC, 2, 2, 2, 2) elasticity tensor A_ijkl from the mesh region tags."""
        if self.sampled:
            raise ValueError("a sampled material has no per-cell tensor; use tensor_at")
        mu, lam = self.lame(mesh)
        return elasticity_tensor(mu, lam)

    def tensor_at(self, mesh: Mesh, qpts: np.ndarray) -> np.ndarray:
        """(NC, nq, 2, 2, 2, 2) elasticity tensor at reference points ``qpts``."""
        qpts = np.asarray(qpts, dtype=float)
        if not self.sampled:
            A = self.tensor(mesh)
            return np.broadcast_to(A[:, None], (mesh.num_cells, len(qpts)) + A.shape[1:])
        x0 = mesh.vertices[mesh.cells[:, 0]]
        pts = x0[:, None, :] + np.einsum("cik,qk->cqi", mesh.jacobians, qpts)
        mu, lam = self._lame_of_tags(np.asarray(self.locator(pts)))
        return elasticity_tensor(mu, lam)

    def quadrature_order(self, degree: int) -> int:
        """Cell rule used for stiffness-type integrals of a degree-``degree`` space."""
        if self.sampled:
            return self.sample_order
        return max(2 * degree - 2, 1)


def elasticity_tensor(mu, lam) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    d = np.eye(2)
    iso = np.einsum("ij,kl->ijkl", d, d)
    sym = np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)
    return lam[..., None, None, None, None] * iso + mu[..., None, None, None, None] * sym


@dataclass(frozen=True)
class ActiveFibers:
    """Fibre activation ``beta * T`` along unit directions ``e_A`` in ``regions``.

    ``direction`` is a constant 2-vector or a callable mapping cell centroids
    (NC, 2) to directions (NC, 2); it is normalised per cell.
    """

    regions: tuple
    beta: float = 1.0
    T: float = 0.0
    direction: object = (1.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def cell_data(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell activation ``beta*T*chi_A`` (NC,) and unit direction (NC, 2)."""
        chi = mesh.cells_in(self.regions).astype(float)
        if callable(self.direction):
            e = np.asarray(self.direction(mesh.centroids), dtype=float)
        else:
            e = np.broadcast_to(np.asarray(self.direction, dtype=float), (mesh.num_cells, 2))
        norm = np.linalg.norm(e, axis=1)
        e = e / np.where(norm > 0, norm, 1.0)[:, None]
        return self.beta * self.T * chi, e


def circumferential(center=(0.0, 0.0)) -> Callable:
    """Direction field e_theta about ``center``."""
    c = np.asarray(center, dtype=float)

    def e_theta(x):
        d = np.asarray(x) - c
        return np.stack([-d[..., 1], d[..., 0]], axis=-1)

    return e_theta


@dataclass(frozen=True)
class Loads:
    """Body force ``B(x)`` and per-tag tractions ``B_N`` (constant or callable)."""

    body: Callable | None = None
    tractions: Mapping[int, object] = field(default_factory=dict)


def _vector_values(value, pts: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(pts), dtype=float)
    return np.broadcast_to(np.asarray(value, dtype=float), pts.shape[:-1] + (2,))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------
def stiffness(space: Space, mat: LinearMaterial, order: int | None = None) -> sp.csr_matrix:
    """Full (unconstrained) stiffness matrix of a(u, v)."""
    if space.ncomp != 2:
        raise ValueError("elasticity needs a 2-component space")
    mesh = space.mesh
    quad = CellQuadrature(mesh, order if order is not None else mat.quadrature_order(space.degree))
    _, G = space.tabulate(quad.points, 1)
    if mat.sampled:
        A = mat.tensor_at(mesh, quad.points)
        AG = np.einsum("cq,cqijkl,cqbl->cqijbk", quad.dx, A, G, optimize=True)
        local = np.einsum("cqaj,cqijbk->caibk", G, AG, optimize=True)
    else:
        A = mat.tensor(mesh)
        M = np.einsum("cq,cqaj,cqbl->cajbl", quad.dx, G, G, optimize=True)
        local = np.einsum("cijkl,cajbl->caibk", A, M, optimize=True)
    n = space.element.num_nodes * 2
    return assemble_matrix(space.cell_dofs, space.cell_dofs, local.reshape(-1, n, n), (space.num_dofs,) * 2)


def boundary_load(space: Space, tractions: Mapping[int, object], order: int | None = None) -> np.ndarray:
    """int_{Gamma_N} B_N . v over the tagged edges."""
    mesh = space.mesh
    f = np.zeros(space.num_dofs)
    if not tractions:
        return f
    t, w = edge_quadrature(order if order is not None else 2 * space.degree + 2)
    for tag, value in tractions.items():
        eids = np.nonzero(mesh.edge_tags == tag)[0]
        if len(eids) == 0:
            raise KeyError(f"no boundary edges carry tag {tag}")
        cells = mesh.edge_cells[eids, 0]
        local_edge = mesh.edge_local_index[eids, 0]
        length = mesh.edge_lengths[eids]
        for j in range(3):
            sel = local_edge == j
            if not np.any(sel):
                continue
            ref = edge_reference_points(j, t)
            phi = space.element.values(ref)  # (nq, nloc)
            c = cells[sel]
            x0 = mesh.vertices[mesh.cells[c, 0]]
            pts = x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[c], ref)
            val = _vector_values(value, pts)  # (n, nq, 2)
            local = np.einsum("q,n,qa,nqi->nai", w, length[sel], phi, val).reshape(len(c), -1)
            f += assemble_vector(space.cell_dofs[c], local, space.num_dofs)
    return f


def active_load(space: Space, fibers: ActiveFibers | None) -> np.ndarray:
    """l_A(v) = -beta T int_{omega_A} (eps(v) e_A) . e_A."""
    if fibers is None:
        return np.zeros(space.num_dofs)
    mesh = space.mesh
    act, e = fibers.cell_data(mesh)
    quad = CellQuadrature(mesh, max(space.degree - 1, 1))
    _, G = space.tabulate(quad.points, 1)
    # (eps(v) e) . e = e_i e_j d_j v_i
    local = -np.einsum("cq,c,cqaj,cj,ci->cai", quad.dx, act, G, e, e, optimize=True)
    return assemble_vector(space.cell_dofs, local.reshape(mesh.num_cells, -1), space.num_dofs)


def body_load(space: Space, body: Callable | None, order: int | None = None) -> np.ndarray:
    if body is None:
        return np.zeros(space.num_dofs)
    mesh = space.mesh
    quad = CellQuadrature(mesh, order if order is not None else 2 * space.degree + 2)
    phi = space.element.values(quad.points)
    B = _vector_values(body, quad.physical_points)
    local = np.einsum("cq,qa,cqi->cai", quad.dx, phi, B)
    return assemble_vector(space.cell_dofs, local.reshape(mesh.num_cells, -1), space.num_dofs)


def load_vector(space: Space, fibers: ActiveFibers | None, loads: Loads | None) -> np.ndarray:
    """Full right-hand side l_E + l_A."""
    loads = loads or Loads()
    return (body_load(space, loads.body) + boundary_load(space, loads.tractions)
            + active_load(space, fibers))


def assemble_primal(space: Space, mat: LinearMaterial, fibers: ActiveFibers | None = None,
                    loads: Loads | None = None) -> SparseSystem:
    """Condensed system for u_h in V_h."""
    K = stiffness(space, mat)
    f = load_vector(space, fibers, loads)
    fixed, vals = space.dirichlet()
    return condense(K, f, fixed, vals)


def solve_primal(space: Space, mat: LinearMaterial, fibers: ActiveFibers | None = None,
                 loads: Loads | None = None) -> Field:
    return Field(space, solve(assemble_primal(space, mat, fibers, loads)))


def residual_vector(u: Field, space: Space, mat: LinearMaterial, fibers: ActiveFibers | None,
                    loads: Loads | None) -> np.ndarray:
    """r(phi_i) = l(phi_i) - a(u, phi_i) for all basis functions of ``space``.

    ``u`` may live on a lower-degree space of the same mesh; it is embedded.
    """
    from .fem.space import embed

    uu = u if u.space.degree == space.degree else embed(u, space)
    return load_vector(space, fibers, loads) - stiffness(space, mat) @ uu.coefficients


def assemble_dual(space: Space, mat: LinearMaterial, goal, u: Field | None = None) -> SparseSystem:
    """Condensed dual system a(v, z) = J(v) with homogeneous Dirichlet data."""
    if not getattr(goal, "linear", False):
        raise TypeError("assemble_dual handles linear goals; use the nonlinear adjoint for others")
    K = stiffness(space, mat).T.tocsr()
    rhs = goal.derivative(Field(space) if u is None else u, space=space)
    fixed = space.fixed_dofs
    return condense(K, rhs, fixed, np.zeros(len(fixed)))


def solve_dual(space: Space, mat: LinearMaterial, goal) -> Field:
    return Field(space, solve(assemble_dual(space, mat, goal)))


# ---------------------------------------------------------------------------
# stresses
# ---------------------------------------------------------------------------
def sigma(u: Field, mat: LinearMaterial, qpts: np.ndarray) -> np.ndarray:
    """(NC, nq, 2, 2) Cauchy stress of u at reference points."""
    grad = u.gradients(qpts)
    A = mat.tensor_at(u.space.mesh, qpts)
    return np.einsum("cqijkl,cqkl->cqij", A, grad)


def sigma_active(u: Field, mat: LinearMaterial, fibers: ActiveFibers | None, qpts=None) -> np.ndarray:
    """sigma(u) + beta T e_A (x) e_A chi_A at reference points (default: centroid)."""
    if qpts is None:
        qpts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    s = sigma(u, mat, qpts)
    if fibers is not None:
        act, e = fibers.cell_data(u.space.mesh)
        s = s + (act[:, None, None] * e[:, :, None] * e[:, None, :])[:, None]
    return s


def div_sigma(u: Field, mat: LinearMaterial, qpts: np.ndarray) -> np.ndarray:
    """(NC, nq, 2) cellwise divergence of sigma(u); the active part is constant per cell.

    For sampled materials this is the pointwise divergence away from the
    material interface; jumps of the coefficient inside a cell are only
    seen by the weak cell residual of :func:`dwr.residual_contributions`.
    """
    if u.space.degree < 2:
        return np.zeros((u.space.mesh.num_cells, len(qpts), 2))
    H = u.hessians(qpts)  # [c, q, k, l, j] = d_l d_j u_k
    A = mat.tensor_at(u.space.mesh, qpts)
    return np.einsum("cqijkl,cqklj->cqi", A, H)


class LinearStress:
    """Stress evaluator used by the residual estimator."""

    def __init__(self, u: Field, mat: LinearMaterial, fibers: ActiveFibers | None = None):
        self.u, self.mat, self.fibers = u, mat, fibers

    def __call__(self, qpts: np.ndarray, divergence: bool = False):
        s = sigma_active(self.u, self.mat, self.fibers, qpts)
        if divergence:
            return s, div_sigma(self.u, self.mat, qpts)
        return s
