"""Large-strain hyperelasticity with active fibre stress.

Stresses and tangents are derived from a stored-energy density ``psi(F, p)``
by second-order forward-mode differentiation (:mod:`dwr_adapt.jet`):

    P = d psi / dF,   A = d^2 psi / dF dF,   dP/dp = d^2 psi / dF dp.

Compressible laws add ``kappa/2 (J - 1)^2``; the incompressible mixed form
adds ``-p (det C - 1)`` and uses Taylor-Hood spaces.  The discrete residual is

    r(x)(v, q) = l(v) - int P(u, p) : grad v - int (d psi/dp) q,

so the pressure row reads ``int (det C - 1) q`` and the tangent is the
(symmetric) Hessian of ``psi``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .elasticity import Loads, body_load, boundary_load
from .fem.assembly import CellQuadrature, assemble_matrix, assemble_vector, condense, solve
from .fem.space import Field, MixedSpace, Space
from .jet import Jet, log

logger = logging.getLogger(__name__)

LAWS = ("linear", "stvk", "mooney", "gent", "haines_wilson")


class InvertedElementError(ArithmeticError):
    """det F <= 0 at a quadrature point."""


class GentLimitError(ArithmeticError):
    """I1 - 3 reached the Gent locking limit Jm."""


class NewtonDivergence(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ActiveStress:
    """Active term psi_a = 1/2 beta T_a f0 . C f0, i.e. P_a = beta T_a (F f0) (x) f0."""

    beta: float = 1.0
    T_a: float = 0.0
    f0: tuple = (1.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if abs(np.linalg.norm(self.f0) - 1.0) > 1e-12:
            raise ValueError("f0 must be a unit vector")


@dataclass(frozen=True)
class HyperMaterial:
    """Hyperelastic law with parameters named as in the usual tables.

    law : 'linear' (mu, lam), 'stvk' (mu, lam), 'mooney' (C10, C01),
          'gent' (E, Jm) or 'haines_wilson' (C10, C01, C20, C02, C30, C11).
    incompressible : mixed u/p formulation with the constraint det C = 1.
    kappa : volumetric penalty for compressible non-StVK laws.
    plane : 'strain' (C33 = 1) or 'stress' (incompressible only:
            F33 = 1 / det F, no pressure unknown).
    """

    law: str
    params: Mapping[str, float]
    incompressible: bool = False
    kappa: float = 0.0
    plane: str = "strain"
    active: ActiveStress | None = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown law {self.law!r}; choose from {LAWS}")
        needed = {"linear": ("mu", "lam"), "stvk": ("mu", "lam"), "mooney": ("C10", "C01"),
                  "gent": ("E", "Jm"),
                  "haines_wilson": ("C10", "C01", "C20", "C02", "C30", "C11")}[self.law]
        missing = [k for k in needed if k not in self.params]
        if missing:
            raise KeyError(f"law {self.law} needs parameters {missing}")
        if not all(np.isfinite(float(v)) for v in self.params.values()):
            raise ValueError("parameters must be finite")
        if self.plane not in ("strain", "stress"):
            raise ValueError("plane must be 'strain' or 'stress'")
        if self.plane == "stress" and not self.incompressible:
            raise ValueError("the plane-stress reduction is implemented for incompressible laws only")
        if self.incompressible and self.law in ("linear", "stvk"):
            raise ValueError(f"law {self.law} is compressible only")

    @property
    def mixed(self) -> bool:
        """True when a pressure unknown is needed."""
        return self.incompressible and self.plane == "strain"

    # -- energy --------------------------------------------------------------
    def energy_jet(self, F: np.ndarray, p: np.ndarray | None = None, second_order: bool = True) -> Jet:
        """psi as a Jet in the variables (F11, F12, F21, F22[, p])."""
        F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
        cols = [F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1]]
        if self.mixed:
            if p is None:
                raise ValueError("mixed formulation needs a pressure")
            cols.append(np.asarray(p, dtype=float).reshape(-1))
        x = Jet.variables(np.stack(cols, axis=1), second_order)
        return self._energy(x)

    def energy(self, F: np.ndarray, p: np.ndarray | None = None) -> np.ndarray:
        return self.energy_jet(F, p, second_order=False).v

    def _energy(self, x):
        F11, F12, F21, F22 = x[:4]
        q = self.params
        J2 = F11 * F22 - F12 * F21
        if np.any(J2.v <= 0):
            raise InvertedElementError(f"det F <= 0 at {int(np.sum(J2.v <= 0))} quadrature points")
        C11 = F11 * F11 + F21 * F21
        C22 = F12 * F12 + F22 * F22
        C12 = F11 * F12 + F21 * F22
        if self.law in ("linear", "stvk"):
            if self.law == "linear":
                e11, e22, e12 = F11 - 1.0, F22 - 1.0, 0.5 * (F12 + F21)
            else:
                e11, e22, e12 = 0.5 * (C11 - 1.0), 0.5 * (C22 - 1.0), 0.5 * C12
            tr = e11 + e22
            psi = q["mu"] * (e11 * e11 + e22 * e22 + 2.0 * e12 * e12) + 0.5 * q["lam"] * tr * tr
        else:
            if self.plane == "stress":
                C33 = J2 ** -2.0
                I1 = C11 + C22 + C33
                I2 = C11 * C22 - C12 * C12 + C33 * (C11 + C22)
                I1b, I2b = I1, I2
            else:
                I1 = C11 + C22 + 1.0
                I2 = C11 * C22 - C12 * C12 + (C11 + C22)
                I1b = I1 * J2 ** (-2.0 / 3.0)
                I2b = I2 * J2 ** (-4.0 / 3.0)
            a, b = I1b - 3.0, I2b - 3.0
            if self.law == "mooney":
                psi = q["C10"] * a + q["C01"] * b
            elif self.law == "gent":
                Jm = float(q["Jm"])
                if np.any(a.v >= Jm):
                    raise GentLimitError(f"I1 - 3 >= Jm = {Jm} at {int(np.sum(a.v >= Jm))} points")
                psi = (-q["E"] / 6.0 * Jm) * log(1.0 - a / Jm)
            else:
                psi = (q["C10"] * a + q["C01"] * b + q["C11"] * a * b + q["C20"] * a * a
                       + q["C02"] * b * b + q["C30"] * a * a * a)
            if self.mixed:
                psi = psi - x[4] * (J2 * J2 - 1.0)
            elif not self.incompressible and self.kappa:
                psi = psi + 0.5 * self.kappa * (J2 - 1.0) * (J2 - 1.0)
        if self.active is not None and self.active.beta * self.active.T_a != 0.0:
            f1, f2 = self.active.f0
            fCf = C11 * (f1 * f1) + C22 * (f2 * f2) + C12 * (2.0 * f1 * f2)
            psi = psi + (0.5 * self.active.beta * self.active.T_a) * fCf
        return psi

    # -- derivatives -----------------------------------------------------------
    def stress_tangent(self, grad_u: np.ndarray, p: np.ndarray | None = None, need_tangent: bool = True):
        """First Piola-Kirchhoff stress, its F-tangent and its p-derivative.

        Returns P (N, 2, 2), A (N, 2, 2, 2, 2) or None, dP/dp (N, 2, 2) or None.
        """
        grad_u = np.asarray(grad_u, dtype=float).reshape(-1, 2, 2)
        F = grad_u + np.eye(2)
        if self.mixed and p is None:
            p = np.zeros(len(F))
        psi = self.energy_jet(F, p if self.mixed else None, second_order=need_tangent)
        P = psi.g[:, :4].reshape(-1, 2, 2)
        if not need_tangent:
            return P, None, None
        A = psi.h[:, :4, :4].reshape(-1, 2, 2, 2, 2)
        dPdp = psi.h[:, :4, 4].reshape(-1, 2, 2) if self.mixed else None
        return P, A, dPdp


def _stiffness_blocks(dx, A, G):
    """K[c, a, i, b, k] = sum_q dx A_ijkl G_aj G_bl, via batched matrix products."""
    nc, nq, nb = G.shape[:3]
    Aw = (dx[:, :, None, None, None, None] * A).reshape(nc, nq, 8, 2)  # (ijk), l
    T = np.matmul(Aw, np.swapaxes(G, 2, 3))  # (c, q, 8, b) with rows (i, j, k)
    T = T.reshape(nc, nq, 2, 2, 2, nb).transpose(0, 1, 3, 2, 4, 5).reshape(nc, nq * 2, 4 * nb)
    Gm = G.transpose(0, 2, 1, 3).reshape(nc, nb, nq * 2)  # (c, a, (q, j))
    K = np.matmul(Gm, T).reshape(nc, nb, 2, 2, nb)  # (c, a, i, k, b)
    return K.transpose(0, 1, 2, 4, 3)


def pk1(mat: HyperMaterial, grad_u: np.ndarray, p: np.ndarray | None = None) -> np.ndarray:
    """First Piola-Kirchhoff stress for one (2, 2) or many (N, 2, 2) gradients."""
    g = np.asarray(grad_u, dtype=float)
    P, _, _ = mat.stress_tangent(g.reshape(-1, 2, 2), None if p is None else np.atleast_1d(p), need_tangent=False)
    return P.reshape(g.shape)


# ---------------------------------------------------------------------------
# discrete problem
# ---------------------------------------------------------------------------
@dataclass
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_iter: int = 25
    load_steps: int = 1
    max_halvings: int = 8

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.load_steps < 1:
            raise ValueError("load_steps must be >= 1")


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)  # residual norms per load step


class HyperelasticProblem:
    """Residual, tangent and solves for a (possibly mixed) hyperelastic problem."""

    def __init__(self, space_u: Space, mat: HyperMaterial, space_p: Space | None = None,
                 loads: Loads | None = None, quad_order: int | None = None):
        if space_u.ncomp != 2:
            raise ValueError("displacement space must have 2 components")
        if mat.mixed and space_p is None:
            raise ValueError("mixed material needs a pressure space")
        if not mat.mixed:
            space_p = None
        if space_p is not None and space_p.degree + 1 != space_u.degree:
            raise ValueError("Taylor-Hood pairs need displacement degree = pressure degree + 1")
        self.space_u, self.space_p, self.mat = space_u, space_p, mat
        self.loads = loads or Loads()
        self.mesh = space_u.mesh
        self.space = MixedSpace([space_u, space_p]) if space_p is not None else space_u
        self.quad = CellQuadrature(self.mesh, quad_order if quad_order is not None else 2 * space_u.degree + 2)
        self._phi_u = space_u.element.values(self.quad.points)
        _, self._G = space_u.tabulate(self.quad.points, 1)
        self._phi_p = None if space_p is None else space_p.element.values(self.quad.points)
        self._external = None

    # -- bookkeeping ---------------------------------------------------------
    @property
    def num_dofs(self) -> int:
        return self.space.num_dofs

    @property
    def nu(self) -> int:
        return self.space_u.num_dofs

    def dirichlet(self, scale: float = 1.0):
        return self.space.dirichlet(scale)

    def split(self, x: np.ndarray) -> tuple[Field, Field | None]:
        u = Field(self.space_u, x[: self.nu])
        p = None if self.space_p is None else Field(self.space_p, x[self.nu:])
        return u, p

    def join(self, u: Field, p: Field | None = None) -> np.ndarray:
        if self.space_p is None:
            return u.coefficients.copy()
        pc = np.zeros(self.space_p.num_dofs) if p is None else p.coefficients
        return np.concatenate([u.coefficients, pc])

    def external(self) -> np.ndarray:
        if self._external is None:
            f = body_load(self.space_u, self.loads.body) + boundary_load(self.space_u, self.loads.tractions)
            self._external = np.concatenate([f, np.zeros(self.num_dofs - self.nu)])
        return self._external

    # -- quadrature-point evaluation -------------------------------------------
    def _qp_state(self, x):
        u, p = self.split(x)
        cu = self.space_u.cell_coefficients(u.coefficients)  # (NC, nloc, 2)
        grad = np.einsum("cqaj,cai->cqij", self._G, cu)
        pv = None
        if p is not None:
            cp = self.space_p.cell_coefficients(p.coefficients)[..., 0]
            pv = np.einsum("qb,cb->cq", self._phi_p, cp)
        return grad, pv

    def _psi(self, x, second_order):
        grad, pv = self._qp_state(x)
        F = grad.reshape(-1, 2, 2) + np.eye(2)
        return self.mat.energy_jet(F, None if pv is None else pv.reshape(-1), second_order)

    def internal(self, x: np.ndarray) -> np.ndarray:
        """A(x)(phi_i): internal force vector."""
        nc, nq = self.quad.dx.shape
        psi = self._psi(x, second_order=False)
        g = psi.g.reshape(nc, nq, -1)
        P = g[..., :4].reshape(nc, nq, 2, 2)
        fu = np.einsum("cq,cqij,cqaj->cai", self.quad.dx, P, self._G).reshape(nc, -1)
        out = assemble_vector(self.space_u.cell_dofs, fu, self.nu)
        if self.space_p is not None:
            fp = np.einsum("cq,cq,qb->cb", self.quad.dx, g[..., 4], self._phi_p)
            out = np.concatenate([out, assemble_vector(self.space_p.cell_dofs, fp, self.space_p.num_dofs)])
        return out

    def residual(self, x: np.ndarray, load_scale: float = 1.0) -> np.ndarray:
        """r(x)(phi_i) = l(phi_i) - A(x)(phi_i)."""
        return load_scale * self.external() - self.internal(x)

    def tangent(self, x: np.ndarray) -> sp.csr_matrix:
        """dA/dx, the exact Jacobian of the internal forces."""
        nc, nq = self.quad.dx.shape
        psi = self._psi(x, second_order=True)
        h = psi.h.reshape(nc, nq, psi.h.shape[1], psi.h.shape[2])
        A = h[..., :4, :4].reshape(nc, nq, 2, 2, 2, 2)
        dx, G = self.quad.dx, self._G
        nlu = G.shape[2] * 2
        Kuu = _stiffness_blocks(dx, A, G).reshape(nc, nlu, nlu)
        if self.space_p is None:
            return assemble_matrix(self.space_u.cell_dofs, self.space_u.cell_dofs, Kuu, (self.nu,) * 2)
        dPdp = h[..., :4, 4].reshape(nc, nq, 2, 2)
        Kup = np.einsum("cq,cqij,cqaj,qb->caib", dx, dPdp, G, self._phi_p, optimize=True).reshape(nc, nlu, -1)
        Kpp = np.einsum("cq,cq,qa,qb->cab", dx, h[..., 4, 4], self._phi_p, self._phi_p, optimize=True)
        top = np.concatenate([Kuu, Kup], axis=2)
        bottom = np.concatenate([np.swapaxes(Kup, 1, 2), Kpp], axis=2)
        local = np.concatenate([top, bottom], axis=1)
        dofs = self.space.cell_dofs
        return assemble_matrix(dofs, dofs, local, (self.num_dofs,) * 2)

    # -- stresses for estimators and goals -------------------------------------
    def stress_evaluator(self, x: np.ndarray):
        """Callable ``(qpts, divergence=False)`` giving P (and div P) per cell."""
        u, p = self.split(x)
        mat = self.mat

        def stress(qpts, divergence=False):
            grad = u.gradients(qpts)
            nc, nq = grad.shape[:2]
            pv = None if p is None else p.values(qpts)[..., 0].reshape(-1)
            P, A, dPdp = mat.stress_tangent(grad.reshape(-1, 2, 2), pv, need_tangent=divergence)
            P = P.reshape(nc, nq, 2, 2)
            if not divergence:
                return P
            A = A.reshape(nc, nq, 2, 2, 2, 2)
            div = np.zeros((nc, nq, 2))
            if u.space.degree >= 2:
                H = u.hessians(qpts)  # [c, q, k, l, j] = d_l d_j u_k
                div += np.einsum("cqijkl,cqklj->cqi", A, H)
            if p is not None and p.space.degree >= 1:
                gp = p.gradients(qpts)[..., 0, :]
                div += np.einsum("cqij,cqj->cqi", dPdp.reshape(nc, nq, 2, 2), gp)
            return P, div

        return stress

    def pressure_residual(self, x: np.ndarray):
        """Callable giving R_p = det C - 1 at reference points (mixed problems)."""
        u, _ = self.split(x)

        def rp(qpts):
            F = u.gradients(qpts) + np.eye(2)
            J = np.linalg.det(F)
            return J * J - 1.0

        return rp

    def det_c_cell_means(self, x: np.ndarray) -> np.ndarray:
        """Cell means of det C (of the in-plane deformation)."""
        grad, _ = self._qp_state(x)
        J = np.linalg.det(grad + np.eye(2))
        detC = J * J
        if self.mat.plane == "stress" and self.mat.incompressible:
            detC = np.ones_like(detC)
        return np.sum(self.quad.dx * detC, axis=1) / np.sum(self.quad.dx, axis=1)

    # -- solves ---------------------------------------------------------------
    def newton_solve(self, x0: np.ndarray | None = None, cfg: NewtonConfig | None = None) -> NewtonResult:
        """Load-stepped Newton with backtracking.

        Dirichlet data and external loads are ramped linearly from the state
        ``x0`` (default zero) over ``cfg.load_steps`` increments.  Every step
        starts with a linear predictor that lifts the Dirichlet increment.
        """
        cfg = cfg or NewtonConfig()
        fixed, g_target = self.dirichlet()
        x = np.zeros(self.num_dofs) if x0 is None else np.array(x0, dtype=float)
        g_start = x[fixed].copy()
        mask = np.ones(self.num_dofs, dtype=bool)
        mask[fixed] = False
        free = np.nonzero(mask)[0]
        total_iters = 0
        history = []
        start_scale = 0.0 if (x0 is None or not np.any(x)) else 1.0
        n = cfg.load_steps
        for step in range(1, n + 1):
            s = step / n
            g_s = g_start + s * (g_target - g_start)
            lam = start_scale + s * (1.0 - start_scale)
            norms = []
            tol = None
            for it in range(cfg.max_iter + 1):
                try:
                    r = self.residual(x, lam)
                except (InvertedElementError, GentLimitError) as exc:
                    raise NewtonDivergence(f"load step {step}: {exc}", step) from exc
                dD = g_s - x[fixed]
                rn = float(np.linalg.norm(r[free]))
                at_bc = not np.any(dD)
                if at_bc:
                    norms.append(rn)
                    if tol is None:
                        tol = max(cfg.abs_tol, cfg.rel_tol * rn)
                    if rn <= tol:
                        break
                if it == cfg.max_iter:
                    raise NewtonDivergence(
                        f"load step {step}: no convergence in {cfg.max_iter} iterations (|r|={rn:.3e})", step)
                K = self.tangent(x)
                system = condense(K, r, fixed, dD)
                delta = solve(system)
                total_iters += 1
                alpha = 1.0
                for _ in range(cfg.max_halvings + 1):
                    trial = x + alpha * delta
                    try:
                        rt = self.residual(trial, lam)
                        ok = (not at_bc) or np.linalg.norm(rt[free]) < rn or rn <= 10 * tol
                    except (InvertedElementError, GentLimitError):
                        ok = False
                    if ok:
                        break
                    alpha *= 0.5
                else:
                    raise NewtonDivergence(f"load step {step}: backtracking exhausted", step)
                x = trial
            history.append(norms)
            logger.debug("load step %d/%d converged, residual history %s", step, n, norms)
        return NewtonResult(x, True, total_iters, history)

    def adjoint_solve(self, x: np.ndarray, goal) -> np.ndarray:
        """Solve K(x)^T z = J'(x) with homogeneous Dirichlet data."""
        u, p = self.split(x)
        rhs = goal.derivative(u, p, self.mat)
        K = self.tangent(x).T.tocsr()
        fixed = self.space.fixed_dofs
        return solve(condense(K, rhs, fixed, np.zeros(len(fixed))))


def newton_solve(problem: HyperelasticProblem, x0=None, cfg: NewtonConfig | None = None) -> NewtonResult:
    return problem.newton_solve(x0, cfg)


def adjoint_solve(problem: HyperelasticProblem, x: np.ndarray, goal) -> np.ndarray:
    return problem.adjoint_solve(x, goal)
