"""Stationary fluid-structure toy: two vector Poisson problems coupled through
the linearised ALE determinant ``1 + div u``.

Unknowns: the "fluid velocity" v, vanishing on the fluid boundary (interface
included), and the "deformation" u on the whole domain, vanishing on the
outer boundary.  With test functions phi (whole domain) and psi (fluid) the
coupled problem reads

    A(v, u)(phi, psi) = ((1 + div u) grad v, grad phi)_F + (grad u, grad phi)_S
                        + (grad u, grad psi)_F  =  (f, phi).

:meth:`FsiProblem.residual` returns ``A(v, u) - (f, phi)`` ordered by test
functions ``[phi, psi]``; unknowns are ordered ``[v, u]``.  The tangent has
rows indexed by test and columns by trial functions; the adjoint system
matrix is assembled separately from the adjoint form and must equal its
transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dwr import DwrReport, residual_contributions
from .fem.assembly import CellQuadrature, SingularMatrixError, assemble_matrix, assemble_vector, edge_quadrature, \
    edge_reference_points, solve
from .fem.space import Field, Space, embed, interpolate
from .hyperelastic import NewtonConfig, NewtonDivergence, NewtonResult
from .mesh import Mesh

FLUID, SOLID = 1, 2


class DegenerateCoefficientError(ArithmeticError):
    """1 + div u <= 0 at a fluid quadrature point."""


def smooth_bump(center=(0.5, 0.5), width: float = 0.25, direction=(1.0, 0.5)) -> Callable:
    """f(x) = exp(-|x - center|^2 / width^2) * direction."""
    c = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)

    def f(x):
        r2 = np.sum((np.asarray(x) - c) ** 2, axis=-1)
        return np.exp(-r2 / width ** 2)[..., None] * d

    return f


@dataclass(frozen=True)
class FsiDomain:
    """Mesh split into fluid and solid cells by region tag."""

    mesh: Mesh
    fluid: int = FLUID
    solid: int = SOLID

    def __post_init__(self):
        tags = set(np.unique(self.mesh.region).tolist())
        if not tags <= {self.fluid, self.solid}:
            raise ValueError(f"region tags {sorted(tags)} are not all fluid ({self.fluid}) or solid ({self.solid})")

    @property
    def fluid_cells(self) -> np.ndarray:
        return self.mesh.region == self.fluid

    @property
    def solid_cells(self) -> np.ndarray:
        return self.mesh.region == self.solid

    @property
    def interface_edges(self) -> np.ndarray:
        """Edges shared by a fluid and a solid cell."""
        ec = self.mesh.edge_cells
        inner = ec[:, 1] >= 0
        r = self.mesh.region
        diff = np.zeros(len(ec), dtype=bool)
        diff[inner] = r[ec[inner, 0]] != r[ec[inner, 1]]
        return np.nonzero(diff)[0]


class FsiProblem:
    """Discrete coupled problem of degree ``degree`` on ``domain``.

    ``load`` is f(x) -> (..., 2) and is scaled by ``amplitude``.  With
    ``coupled=False`` the coefficient ``1 + div u`` is replaced by 1.
    """

    def __init__(self, domain: FsiDomain | Mesh, degree: int = 1, load: Callable | None = None,
                 amplitude: float = 1.0, coupled: bool = True, quad_order: int | None = None):
        self.domain = domain if isinstance(domain, FsiDomain) else FsiDomain(domain)
        self.mesh = self.domain.mesh
        self.degree = degree
        self.load = load
        self.amplitude = float(amplitude)
        self.coupled = coupled
        self.space = Space(self.mesh, degree, 2)
        sp_ = self.space
        nodes_f = np.unique(sp_.cell_nodes[self.domain.fluid_cells])
        nodes_s = np.unique(sp_.cell_nodes[self.domain.solid_cells])
        bnd = sp_.boundary_nodes(np.unique(self.mesh.boundary_tags))
        v_nodes = np.setdiff1d(np.setdiff1d(nodes_f, nodes_s), bnd)
        u_nodes = np.setdiff1d(np.arange(sp_.num_nodes), bnd)
        self.v_dofs = (2 * v_nodes[:, None] + np.arange(2)).ravel()
        self.u_dofs = (2 * u_nodes[:, None] + np.arange(2)).ravel()
        self.nv, self.nu = len(self.v_dofs), len(self.u_dofs)
        self.quad = CellQuadrature(self.mesh, quad_order if quad_order is not None else 2 * degree + 2)
        self._phi = sp_.element.values(self.quad.points)
        _, self._G = sp_.tabulate(self.quad.points, 1)
        self._chi_f = self.domain.fluid_cells.astype(float)
        self._chi_s = self.domain.solid_cells.astype(float)

    # -- bookkeeping -------------------------------------------------------------
    @property
    def num_dofs(self) -> int:
        return self.nv + self.nu

    def split(self, x: np.ndarray) -> tuple[Field, Field]:
        """Full-space fields (v, u) from the unknown vector ``[v, u]``."""
        v = np.zeros(self.space.num_dofs)
        u = np.zeros(self.space.num_dofs)
        v[self.v_dofs] = x[: self.nv]
        u[self.u_dofs] = x[self.nv:]
        return Field(self.space, v), Field(self.space, u)

    def join(self, v: Field, u: Field) -> np.ndarray:
        return np.concatenate([v.coefficients[self.v_dofs], u.coefficients[self.u_dofs]])

    def _grads(self, x):
        v, u = self.split(x)
        gv = np.einsum("cqaj,cai->cqij", self._G, self.space.cell_coefficients(v.coefficients))
        gu = np.einsum("cqaj,cai->cqij", self._G, self.space.cell_coefficients(u.coefficients))
        return gv, gu

    def _coefficient(self, gu):
        """1 + div u on fluid cells (1 when uncoupled); raises when degenerate."""
        if not self.coupled:
            return np.ones(gu.shape[:2])
        a = 1.0 + gu[..., 0, 0] + gu[..., 1, 1]
        bad = (a <= 0) & (self._chi_f[:, None] > 0)
        if np.any(bad):
            raise DegenerateCoefficientError(f"1 + div u <= 0 at {int(bad.sum())} fluid quadrature points")
        return a

    def load_vector(self) -> np.ndarray:
        """(f, phi_i) over the full space."""
        if self.load is None:
            return np.zeros(self.space.num_dofs)
        f = self.amplitude * np.asarray(self.load(self.quad.physical_points), dtype=float)
        local = np.einsum("cq,qa,cqi->cai", self.quad.dx, self._phi, f)
        return assemble_vector(self.space.cell_dofs, local.reshape(self.mesh.num_cells, -1), self.space.num_dofs)

    # -- residual and tangent ------------------------------------------------------
    def residual(self, x: np.ndarray) -> np.ndarray:
        """A(v, u)(phi, psi) - (f, phi), ordered ``[phi (u-dofs), psi (v-dofs)]``."""
        gv, gu = self._grads(x)
        a = self._coefficient(gu)
        dx, G = self.quad.dx, self._G
        flux_phi = (self._chi_f[:, None] * a)[..., None, None] * gv + self._chi_s[:, None, None, None] * gu
        flux_psi = self._chi_f[:, None, None, None] * gu
        n = self.space.num_dofs
        cd = self.space.cell_dofs
        nc = self.mesh.num_cells
        r_phi = assemble_vector(cd, np.einsum("cq,cqij,cqaj->cai", dx, flux_phi, G).reshape(nc, -1), n)
        r_phi -= self.load_vector()
        r_psi = assemble_vector(cd, np.einsum("cq,cqij,cqaj->cai", dx, flux_psi, G).reshape(nc, -1), n)
        return np.concatenate([r_phi[self.u_dofs], r_psi[self.v_dofs]])

    def _laplacian(self, weight) -> sp.csr_matrix:
        """Full-space vector Laplacian with quadrature weights ``weight`` (NC, nq)."""
        dx, G = self.quad.dx, self._G
        s = np.einsum("cq,cq,cqaj,cqbj->cab", dx, weight, G, G, optimize=True)
        nl = s.shape[1]
        local = np.zeros((len(s), nl, 2, nl, 2))
        local[:, :, 0, :, 0] = s
        local[:, :, 1, :, 1] = s
        n = self.space.num_dofs
        return assemble_matrix(self.space.cell_dofs, self.space.cell_dofs, local.reshape(len(s), 2 * nl, 2 * nl), (n, n))

    def _coupling(self, gv) -> sp.csr_matrix:
        """Full-space matrix of (div(du) grad v, grad phi)_F; rows phi, columns du."""
        dx, G = self.quad.dx, self._G
        local = np.einsum("cq,c,cqij,cqaj,cqbk->caibk", dx, self._chi_f, gv, G, G, optimize=True)
        nc, nl = local.shape[:2]
        n = self.space.num_dofs
        return assemble_matrix(self.space.cell_dofs, self.space.cell_dofs, local.reshape(nc, 2 * nl, 2 * nl), (n, n))

    def tangent(self, x: np.ndarray) -> sp.csr_matrix:
        """Exact Jacobian of :meth:`residual`; rows [phi, psi], columns [v, u]."""
        gv, gu = self._grads(x)
        a = self._coefficient(gu)
        chi_f = np.broadcast_to(self._chi_f[:, None], a.shape)
        chi_s = np.broadcast_to(self._chi_s[:, None], a.shape)
        K_phi_v = self._laplacian(chi_f * a)
        K_phi_u = self._laplacian(chi_s)
        if self.coupled:
            K_phi_u = K_phi_u + self._coupling(gv)
        K_psi_u = self._laplacian(chi_f)
        U, V = self.u_dofs, self.v_dofs
        return sp.bmat([[K_phi_v[U][:, V], K_phi_u[U][:, U]],
                        [None, K_psi_u[V][:, U]]], format="csr")

    def adjoint_matrix(self, x: np.ndarray) -> sp.csr_matrix:
        """Matrix of the adjoint form A'(v, u)(zeta, chi; z, w).

        Rows are the trial directions ``[zeta (v-dofs), chi (u-dofs)]``,
        columns the adjoint unknowns ``[z (u-dofs), w (v-dofs)]``:

            (div(chi) grad v, grad z)_F + ((1 + div u) grad zeta, grad z)_F
            + (grad chi, grad z)_S + (grad chi, grad w)_F.
        """
        gv, gu = self._grads(x)
        a = self._coefficient(gu)
        dx, G = self.quad.dx, self._G
        nc, nq, nl = G.shape[:3]
        n = self.space.num_dofs
        cd = self.space.cell_dofs
        eye = np.eye(2)

        def block(local):
            return assemble_matrix(cd, cd, local.reshape(nc, 2 * nl, 2 * nl), (n, n))

        # (row basis b, comp k) tests the trial direction; (col basis a, comp i) is the adjoint unknown
        zeta_z = np.einsum("cq,c,cq,cqbj,cqaj,ki->cbkai", dx, self._chi_f, a, G, G, eye, optimize=True)
        chi_z = np.einsum("cq,c,cqbj,cqaj,ki->cbkai", dx, self._chi_s, G, G, eye, optimize=True)
        if self.coupled:
            chi_z = chi_z + np.einsum("cq,c,cqbk,cqij,cqaj->cbkai", dx, self._chi_f, G, gv, G, optimize=True)
        chi_w = np.einsum("cq,c,cqbj,cqaj,ki->cbkai", dx, self._chi_f, G, G, eye, optimize=True)
        U, V = self.u_dofs, self.v_dofs
        return sp.bmat([[block(zeta_z)[V][:, U], None],
                        [block(chi_z)[U][:, U], block(chi_w)[U][:, V]]], format="csr")

    # -- solves --------------------------------------------------------------------
    def newton_solve(self, x0: np.ndarray | None = None, cfg: NewtonConfig | None = None) -> NewtonResult:
        """Newton's method with backtracking on the residual norm."""
        cfg = cfg or NewtonConfig()
        x = np.zeros(self.num_dofs) if x0 is None else np.array(x0, dtype=float)
        r = self.residual(x)
        norms = [float(np.linalg.norm(r))]
        tol = max(cfg.abs_tol, cfg.rel_tol * norms[0])
        its = 0
        while norms[-1] > tol:
            if its == cfg.max_iter:
                raise NewtonDivergence(f"no convergence in {cfg.max_iter} iterations (|r|={norms[-1]:.3e})", 1)
            delta = solve(self.tangent(x), -r)
            its += 1
            step = 1.0
            for _ in range(cfg.max_halvings + 1):
                trial = x + step * delta
                try:
                    rt = self.residual(trial)
                    if np.linalg.norm(rt) < norms[-1] or norms[-1] <= 10 * tol:
                        break
                except DegenerateCoefficientError:
                    pass
                step *= 0.5
            else:
                raise NewtonDivergence("backtracking exhausted", 1)
            x, r = trial, rt
            norms.append(float(np.linalg.norm(r)))
        return NewtonResult(x, True, its, [norms])

    def adjoint_solve(self, x: np.ndarray, goal) -> np.ndarray:
        """Solve K(x)^T y = J'(x); returns y ordered ``[z (u-dofs), w (v-dofs)]``."""
        rhs = goal.gradient(self, x)
        if not np.any(rhs):
            return np.zeros(self.num_dofs)
        try:
            return solve(self.tangent(x).T.tocsr(), rhs)
        except SingularMatrixError:
            raise

    def adjoint_fields(self, y: np.ndarray) -> tuple[Field, Field]:
        """Full-space fields (z, w) from an adjoint vector ordered ``[z, w]``."""
        z = np.zeros(self.space.num_dofs)
        w = np.zeros(self.space.num_dofs)
        z[self.u_dofs] = y[: self.nu]
        w[self.v_dofs] = y[self.nu:]
        return Field(self.space, z), Field(self.space, w)

    def load_derivative(self) -> np.ndarray:
        """d residual / d amplitude, ordered like the residual."""
        f = self.load_vector() / (self.amplitude if self.amplitude else 1.0)
        if self.amplitude == 0:
            f = FsiProblem(self.domain, self.degree, self.load, 1.0, self.coupled).load_vector()
        return np.concatenate([-f[self.u_dofs], np.zeros(self.nv)])

    # -- fluxes for the estimator ------------------------------------------------------
    def flux_evaluators(self, x: np.ndarray):
        """Callables giving the phi- and psi-equation fluxes at reference points."""
        v, u = self.split(x)
        chi_f, chi_s = self._chi_f[:, None, None, None], self._chi_s[:, None, None, None]
        coupled = self.coupled

        def phi_flux(qpts, divergence=False):
            gv, gu = v.gradients(qpts), u.gradients(qpts)
            a = 1.0 + gu[..., 0, 0] + gu[..., 1, 1] if coupled else np.ones(gu.shape[:2])
            P = chi_f * a[..., None, None] * gv + chi_s * gu
            if divergence:
                raise NotImplementedError("use the weak cell residual")
            return P

        def psi_flux(qpts, divergence=False):
            if divergence:
                raise NotImplementedError("use the weak cell residual")
            return chi_f * u.gradients(qpts)

        return phi_flux, psi_flux


# ---------------------------------------------------------------------------
# goals
# ---------------------------------------------------------------------------
@dataclass
class FluidIntegral:
    """J = int_F v . weights."""

    weights: tuple = (1.0, 0.0)

    def _vector(self, problem: FsiProblem) -> np.ndarray:
        q = problem.quad
        w = np.asarray(self.weights, dtype=float)
        local = np.einsum("cq,c,qa,k->cak", q.dx, problem._chi_f, problem._phi, w)
        full = assemble_vector(problem.space.cell_dofs, local.reshape(problem.mesh.num_cells, -1),
                               problem.space.num_dofs)
        return full

    def evaluate(self, problem: FsiProblem, x: np.ndarray) -> float:
        v, _ = problem.split(x)
        return float(self._vector(problem) @ v.coefficients)

    def gradient(self, problem: FsiProblem, x: np.ndarray) -> np.ndarray:
        full = self._vector(problem)
        return np.concatenate([full[problem.v_dofs], np.zeros(problem.nu)])


@dataclass
class InterfaceFlux:
    """J = int_I (grad u|_S n_S) . e_component ds, n_S pointing from solid to fluid."""

    component: int = 0

    def _vector(self, problem: FsiProblem) -> np.ndarray:
        mesh = problem.mesh
        eids = problem.domain.interface_edges
        if len(eids) == 0:
            raise KeyError("the mesh has no fluid-solid interface")
        ec, el = mesh.edge_cells[eids], mesh.edge_local_index[eids]
        solid_first = problem.domain.solid_cells[ec[:, 0]]
        cells = np.where(solid_first, ec[:, 0], ec[:, 1])
        loc = np.where(solid_first, el[:, 0], el[:, 1])
        normals = mesh.cell_outward_normals()
        t, w = edge_quadrature(2 * problem.degree)
        out = np.zeros(problem.space.num_dofs)
        for j in range(3):
            sel = loc == j
            if not np.any(sel):
                continue
            c = cells[sel]
            _, G = problem.space.tabulate(edge_reference_points(j, t), 1, c)  # (n, nq, nl, 2)
            n = normals[c, j]
            length = mesh.edge_lengths[eids[sel]]
            vals = np.einsum("q,n,nqaj,nj->na", w, length, G, n)
            local = np.zeros((len(c), vals.shape[1], 2))
            local[:, :, self.component] = vals
            out += assemble_vector(problem.space.cell_dofs[c], local.reshape(len(c), -1), problem.space.num_dofs)
        return out

    def evaluate(self, problem: FsiProblem, x: np.ndarray) -> float:
        _, u = problem.split(x)
        return float(self._vector(problem) @ u.coefficients)

    def gradient(self, problem: FsiProblem, x: np.ndarray) -> np.ndarray:
        full = self._vector(problem)
        return np.concatenate([np.zeros(problem.nv), full[problem.u_dofs]])


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------
def fsi_residual(problem: FsiProblem, x: np.ndarray) -> np.ndarray:
    return problem.residual(x)


def fsi_tangent(problem: FsiProblem, x: np.ndarray) -> sp.csr_matrix:
    return problem.tangent(x)


def fsi_adjoint(problem: FsiProblem, x: np.ndarray, goal) -> tuple[Field, Field]:
    """Adjoint fields (z, w_f); z is continuous across the interface, w_f vanishes on it."""
    return problem.adjoint_fields(problem.adjoint_solve(x, goal))


def lift(problem: FsiProblem, x: np.ndarray, target: FsiProblem) -> np.ndarray:
    """Embed a primal vector into the (higher-degree) problem ``target`` on the same mesh."""
    v, u = problem.split(x)
    return target.join(embed(v, target.space), embed(u, target.space))


def fsi_dwr(problem: FsiProblem, x: np.ndarray, goal, enriched: FsiProblem | None = None) -> DwrReport:
    """DWR report for the coupled system with an adjoint of one degree higher.

    The global estimator is |r(z_hat, w_hat)| with the residual of the
    enriched problem at the embedded primal state.  Local contributions
    localize both equations cellwise (weak cell residual plus flux jumps,
    including the interface flux balance).
    """
    hi = enriched or FsiProblem(problem.domain, problem.degree + 1, problem.load, problem.amplitude,
                                problem.coupled)
    xh = lift(problem, x, hi)
    y = hi.adjoint_solve(xh, goal)
    R = hi.residual(xh)  # ordered [phi, psi] = adjoint ordering [z, w]
    eta = abs(float(R @ y))
    z, w = hi.adjoint_fields(y)
    low = problem.space
    wz = Field(hi.space, z.coefficients - embed(interpolate(z, low), hi.space).coefficients)
    ww = Field(hi.space, w.coefficients - embed(interpolate(w, low), hi.space).coefficients)
    phi_flux, psi_flux = problem.flux_evaluators(x)
    order = hi.quad.order
    body = None
    if problem.load is not None:
        amp = problem.amplitude
        body = lambda pts: amp * np.asarray(problem.load(pts), dtype=float)  # noqa: E731
    rho = residual_contributions(problem.mesh, wz, phi_flux, body=body, weak=True, cell_order=order)
    rho += residual_contributions(problem.mesh, ww, psi_flux, weak=True, cell_order=order)
    report = DwrReport(eta, np.abs(rho), rho, dofs=problem.num_dofs, cells=problem.mesh.num_cells,
                       J_value=goal.evaluate(problem, x))
    # -R(w) is the conservativity reference for the signed contributions
    report.extras["residual_of_weight"] = -float(R @ np.concatenate([wz.coefficients[hi.u_dofs],
                                                                     ww.coefficients[hi.v_dofs]]))
    report.extras["adjoint"] = (z, w)
    return report
