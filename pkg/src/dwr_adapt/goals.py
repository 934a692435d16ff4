"""Quantities of interest, their derivatives and sign-weighted multigoal combination."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fem.assembly import CellQuadrature, assemble_vector, edge_quadrature, edge_reference_points
from .fem.space import Field, Space, locate_points


class Goal:
    """Base class.  ``linear`` goals have u-independent derivatives."""

    linear: bool = True

    def evaluate(self, u: Field, p: Field | None = None, material=None) -> float:
        raise NotImplementedError

    def derivative(self, u: Field, p: Field | None = None, material=None, space: Space | None = None):
        """J'(u)(phi_i) for every basis function.

        Returns the u-part only when ``p`` is None, otherwise the
        concatenation ``[d/du, d/dp]``.  For linear goals ``space`` may name a
        different space than ``u.space`` (u is then ignored).
        """
        raise NotImplementedError


def derivative_rhs(goal: Goal, u: Field, space: Space | None = None, p: Field | None = None,
                   material=None) -> np.ndarray:
    """Vector of J'(u)(phi_i) over the basis of ``space`` (default ``u.space``)."""
    if space is not None and space is not u.space:
        if goal.linear:
            return goal.derivative(Field(space), p, material, space=space)
        raise ValueError("nonlinear goal derivatives need u on the target space")
    return goal.derivative(u, p, material)


@dataclass
class SubdomainIntegral(Goal):
    """J(u) = int_omega sum_i w_i u_i over cells whose region tag is in ``regions``.

    ``regions=None`` integrates over the whole domain.
    """

    regions: tuple | None = None
    weights: tuple = (1.0, 1.0)
    linear = True

    def _mask(self, mesh):
        if self.regions is None:
            return np.ones(mesh.num_cells)
        mask = mesh.cells_in(self.regions)
        unknown = set(np.atleast_1d(self.regions).tolist()) - set(np.unique(mesh.region).tolist())
        if unknown:
            raise KeyError(f"unknown region tags {sorted(unknown)}")
        return mask.astype(float)

    def _weights(self, ncomp):
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (ncomp,))
        return w

    def evaluate(self, u, p=None, material=None):
        sp_ = u.space
        quad = CellQuadrature(sp_.mesh, sp_.degree + 1)
        vals = u.values(quad.points)  # (NC, nq, ncomp)
        w = self._weights(sp_.ncomp)
        return float(np.einsum("cq,c,cqk,k->", quad.dx, self._mask(sp_.mesh), vals, w))

    def derivative(self, u, p=None, material=None, space=None):
        sp_ = space if space is not None else u.space
        quad = CellQuadrature(sp_.mesh, sp_.degree + 1)
        phi = sp_.element.values(quad.points)
        w = self._weights(sp_.ncomp)
        local = np.einsum("cq,c,qa,k->cak", quad.dx, self._mask(sp_.mesh), phi, w)
        out = assemble_vector(sp_.cell_dofs, local.reshape(sp_.mesh.num_cells, -1), sp_.num_dofs)
        return _append_pressure(out, p)


@dataclass
class PointValue(Goal):
    """J(u) = u_component(point)."""

    point: tuple = (0.0, 0.0)
    component: int = 0
    linear = True

    def evaluate(self, u, p=None, material=None):
        return float(u(np.asarray(self.point, dtype=float)[None])[0, self.component])

    def derivative(self, u, p=None, material=None, space=None):
        sp_ = space if space is not None else u.space
        cells, ref = locate_points(sp_.mesh, np.asarray(self.point, dtype=float)[None])
        phi = sp_.element.values(ref)[0]
        out = np.zeros(sp_.num_dofs)
        dofs = sp_.cell_nodes[cells[0]] * sp_.ncomp + self.component
        out[dofs] = phi
        return _append_pressure(out, p)


@dataclass
class BoundaryFlux(Goal):
    """J(u) = thickness * int_{Gamma_tag} (P(u, p) n) . d ds.

    ``direction=None`` uses the outward normal (normal traction).  ``P`` is the
    stress of ``material``: the first Piola-Kirchhoff stress for hyperelastic
    materials, the Cauchy stress for linear ones.
    """

    tag: int = 0
    direction: tuple | None = None
    thickness: float = 1.0
    linear = False

    def _edges(self, mesh):
        eids = np.nonzero(mesh.edge_tags == self.tag)[0]
        if len(eids) == 0:
            raise KeyError(f"no boundary edges carry tag {self.tag}")
        return eids

    def _pieces(self, u, order):
        """Yield (cells, ref points, weights*length (n, nq), normals (n, 2), local edge)."""
        mesh = u.space.mesh
        eids = self._edges(mesh)
        t, w = edge_quadrature(order)
        cells = mesh.edge_cells[eids, 0]
        loc = mesh.edge_local_index[eids, 0]
        normals = mesh.cell_outward_normals()
        for j in range(3):
            sel = loc == j
            if not np.any(sel):
                continue
            c = cells[sel]
            yield c, edge_reference_points(j, t), np.outer(mesh.edge_lengths[eids[sel]], w), normals[c, j]

    def _dir(self, n):
        if self.direction is None:
            return n
        return np.broadcast_to(np.asarray(self.direction, dtype=float), n.shape)

    def evaluate(self, u, p=None, material=None):
        if material is None:
            raise ValueError("BoundaryFlux needs a material to form the stress")
        total = 0.0
        for c, ref, wl, n in self._pieces(u, 2 * u.space.degree + 2):
            P, _, _ = _stress(material, u, p, c, ref, need_tangent=False)
            d = self._dir(n)
            total += float(np.einsum("cq,cqij,cj,ci->", wl, P, n, d))
        return self.thickness * total

    def derivative(self, u, p=None, material=None, space=None):
        if material is None:
            raise ValueError("BoundaryFlux needs a material to form the stress")
        sp_ = u.space
        du = np.zeros(sp_.num_dofs)
        dp = None if p is None else np.zeros(p.space.num_dofs)
        for c, ref, wl, n in self._pieces(u, 2 * sp_.degree + 2):
            P, A, dPdp = _stress(material, u, p, c, ref, need_tangent=True)
            d = self._dir(n)
            _, G = sp_.tabulate(ref, 1, c)
            local = np.einsum("cq,cqijkl,cj,ci,cqal->cak", wl, A, n, d, G, optimize=True)
            du += assemble_vector(sp_.cell_dofs[c], local.reshape(len(c), -1), sp_.num_dofs)
            if p is not None and dPdp is not None:
                psi = p.space.element.values(ref)
                lp = np.einsum("cq,cqij,cj,ci,qb->cb", wl, dPdp, n, d, psi)
                dp += assemble_vector(p.space.cell_dofs[c], lp, p.space.num_dofs)
        du *= self.thickness
        if p is None:
            return du
        return np.concatenate([du, self.thickness * dp])


def _append_pressure(vec, p):
    if p is None:
        return vec
    return np.concatenate([vec, np.zeros(p.space.num_dofs)])


def _stress(material, u: Field, p: Field | None, cells, ref, need_tangent: bool):
    """Stress (n, nq, 2, 2), tangent (n, nq, 2, 2, 2, 2) and dP/dp at reference points of ``cells``."""
    grad = u.gradients(ref, cells)[..., :2, :]
    shape = grad.shape[:2]
    if hasattr(material, "stress_tangent"):
        pv = None if p is None else p.values(ref, cells)[..., 0].reshape(-1)
        P, A, dPdp = material.stress_tangent(grad.reshape(-1, 2, 2), pv, need_tangent=need_tangent)
        P = P.reshape(*shape, 2, 2)
        A = None if A is None else A.reshape(*shape, 2, 2, 2, 2)
        dPdp = None if dPdp is None else dPdp.reshape(*shape, 2, 2)
        return P, A, dPdp
    # linear elastic material keyed by region tag
    A = material.tensor_at(u.space.mesh, ref)[cells]
    P = np.einsum("cqijkl,cqkl->cqij", A, grad)
    return P, A, None


@dataclass
class Combined(Goal):
    """J_c(u) = sum_i w_i J_i(u); the weights default to ``omegas`` until resolved."""

    goals: Sequence[Goal] = ()
    omegas: Sequence[float] = ()
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if len(self.goals) != len(self.omegas):
            raise ValueError("one omega per goal required")
        if any(isinstance(g, Combined) for g in self.goals):
            raise TypeError("Combined goals cannot be nested")
        if any(o < 0 for o in self.omegas):
            raise ValueError("omegas must be non-negative")
        if self.weights is None:
            self.weights = np.asarray(self.omegas, dtype=float)

    @property
    def linear(self):  # type: ignore[override]
        return all(g.linear for g in self.goals)

    def evaluate(self, u, p=None, material=None):
        return float(sum(w * g.evaluate(u, p, material) for w, g in zip(self.weights, self.goals) if w != 0))

    def derivative(self, u, p=None, material=None, space=None):
        out = None
        for w, g in zip(self.weights, self.goals):
            d = g.derivative(u, p, material, space=space) * w
            out = d if out is None else out + d
        return out


def resolve_signs(goals: Sequence[Goal], omegas: Sequence[float], u_h: Field, u_h2: Field,
                  p_h: Field | None = None, p_h2: Field | None = None, material=None,
                  scale: float | None = None) -> np.ndarray:
    """Sign weights w_i = omega_i sign(J_i(u_h2) - J_i(u_h)) / |J_i(u_h)|.

    If |J_i(u_h)| < 1e-14 * scale the denominator is replaced by 1.  A zero
    sign drops the goal (weight 0) with a warning.
    """
    j_h = np.array([g.evaluate(u_h, p_h, material) for g in goals])
    j_h2 = np.array([g.evaluate(u_h2, p_h2, material) for g in goals])
    return sign_weights(j_h, j_h2, omegas, scale)


def sign_weights(j_h, j_h2, omegas, scale: float | None = None) -> np.ndarray:
    j_h = np.asarray(j_h, dtype=float)
    j_h2 = np.asarray(j_h2, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    if scale is None:
        scale = max(float(np.max(np.abs(np.concatenate([j_h, j_h2])))), 1e-300)
    sign = np.sign(j_h2 - j_h)
    denom = np.where(np.abs(j_h) < 1e-14 * scale, 1.0, np.abs(j_h))
    dropped = np.nonzero(sign == 0)[0]
    if len(dropped):
        warnings.warn(f"goals {dropped.tolist()} have no detectable error sign and are dropped", stacklevel=2)
    return omegas * sign / denom
