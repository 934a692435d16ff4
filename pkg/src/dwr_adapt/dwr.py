"""Dual weighted residual estimators.

The error representation ``J(u) - J(u_h) ~ r(z)`` is evaluated in two ways:

* globally, ``eta_h = |r(z_hat)|`` with the assembled residual vector, and
* locally, by cellwise integration by parts, giving signed contributions

      rho_K = int_K R_K . w + sum_{E in dK} int_E R_{E,K} . w  (+ int_K R_p q)

  with ``w = z_hat - i_h z_hat``, ``R_K = B + div P``, ``R_{E,K} = -1/2 [[P n]]``
  on interior edges and ``B_N - P n`` on boundary edges.  ``eta_K = |rho_K|``.

Because the localization is an exact rewriting of ``r(w)``, the signed
contributions sum to ``r(z_hat - i_h z_hat)`` whenever the integrands are
polynomial (linear problems), which is checked by :func:`conservativity`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .fem.assembly import CellQuadrature, edge_quadrature, edge_reference_points
from .fem.space import Field, embed, interpolate
from .mesh import LOCAL_EDGES, Mesh


@dataclass
class DwrReport:
    eta_global: float
    eta_local: np.ndarray
    signed_local: np.ndarray | None = None
    dofs: int = 0
    cells: int = 0
    J_value: float | None = None
    reference_error: float | None = None
    effectivity_global: float | None = None
    effectivity_sum: float | None = None
    marked: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eta_local = np.asarray(self.eta_local, dtype=float)
        if np.any(self.eta_local < 0):
            raise ValueError("local indicators must be non-negative")
        if not self.cells:
            self.cells = len(self.eta_local)

    @property
    def sum_local(self) -> float:
        return float(np.sum(self.eta_local))

    def bound_holds(self, rtol: float = 1e-9) -> bool:
        """eta_h <= sum_K eta_K (up to round-off)."""
        return self.eta_global <= self.sum_local * (1 + rtol) + 1e-300


def weight(z_hat: Field, coarse_degree: int) -> Field:
    """z_hat - i_h z_hat, with i_h the Lagrange interpolant onto degree ``coarse_degree``."""
    from .fem.space import Space

    coarse = Space(z_hat.space.mesh, coarse_degree, z_hat.space.ncomp)
    ih = embed(interpolate(z_hat, coarse), z_hat.space)
    return Field(z_hat.space, z_hat.coefficients - ih.coefficients)


def global_estimator(residual, z_hat: Field | np.ndarray) -> float:
    """eta_h = |r(z_hat)| for a residual vector (or callable) on z_hat's space."""
    z = z_hat.coefficients if isinstance(z_hat, Field) else np.asarray(z_hat)
    if callable(residual):
        return abs(float(residual(z)))
    residual = np.asarray(residual)
    if residual.shape != z.shape:
        raise ValueError(f"residual size {residual.shape} does not match dual size {z.shape}")
    return abs(float(residual @ z))


def _vector(value, pts):
    if value is None:
        return np.zeros(pts.shape[:-1] + (2,))
    if callable(value):
        return np.asarray(value(pts), dtype=float)
    return np.broadcast_to(np.asarray(value, dtype=float), pts.shape[:-1] + (2,))


def residual_contributions(mesh: Mesh, w: Field, stress: Callable, body=None,
                           tractions: Mapping[int, object] | None = None, order: int | None = None,
                           pressure_weight: Field | None = None, pressure_residual: Callable | None = None,
                           cell_order: int | None = None, weak: bool = False) -> np.ndarray:
    """Signed cellwise DWR contributions rho_K (see module docstring).

    Parameters
    ----------
    w : Field
        Vector weight ``z_hat - i_h z_hat``.
    stress : callable
        ``stress(qpts, divergence=False)`` returns the stress ``(NC, nq, 2, 2)``
        at reference points, plus its cellwise divergence ``(NC, nq, 2)``
        when ``divergence=True``.
    body : callable or None
        Body force B(x).
    tractions : mapping
        Boundary tag -> prescribed traction B_N; other boundary edges are
        traction free.
    pressure_weight, pressure_residual
        Optional scalar weight and ``R_p(qpts) -> (NC, nq)`` for mixed problems.
    weak : bool
        Use the cell term before integration by parts,
        ``int_K B.w - P : grad w + sum_E int_E (P n)_K . w``.  Identical to
        the strong form when P is smooth inside every cell, and still exact
        when a material interface cuts through cells.  ``cell_order`` must
        then be the rule the residual vector was assembled with.
    """
    tractions = dict(tractions or {})
    kw = w.space.degree
    order = order if order is not None else 2 * kw + 2
    cell_order = cell_order if cell_order is not None else 2 * kw + 2
    nc = mesh.num_cells
    rho = np.zeros(nc)

    # cell residual
    quad = CellQuadrature(mesh, cell_order)
    B = _vector(body, quad.physical_points)
    if weak:
        P = stress(quad.points)
        rho += np.einsum("cq,cqi,cqi->c", quad.dx, B, w.values(quad.points))
        rho -= np.einsum("cq,cqij,cqij->c", quad.dx, P, w.gradients(quad.points))
    else:
        _, divP = stress(quad.points, divergence=True)
        rho += np.einsum("cq,cqi,cqi->c", quad.dx, divP + B, w.values(quad.points))
    if pressure_weight is not None and pressure_residual is not None:
        Rp = pressure_residual(quad.points)
        rho += np.einsum("cq,cq,cq->c", quad.dx, Rp, pressure_weight.values(quad.points)[..., 0])

    # edge residuals, evaluated on a common (global) orientation of each edge
    t, wt = edge_quadrature(order)
    nq = len(t)
    normals = mesh.cell_outward_normals()
    flux = np.empty((nc, 3, nq, 2))
    wvals = np.empty((nc, 3, nq, 2))
    pts = np.empty((nc, 3, nq, 2))
    x0 = mesh.vertices[mesh.cells[:, 0]]
    for j, (s, e) in enumerate(LOCAL_EDGES):
        ref = edge_reference_points(j, t)
        P = stress(ref)
        Fj = np.einsum("cqik,ck->cqi", P, normals[:, j])
        Wj = w.values(ref)
        Xj = x0[:, None, :] + np.einsum("cik,qk->cqi", mesh.jacobians, ref)
        forward = mesh.cells[:, s] < mesh.cells[:, e]
        rev = ~forward
        Fj[rev] = Fj[rev, ::-1]
        Wj[rev] = Wj[rev, ::-1]
        Xj[rev] = Xj[rev, ::-1]
        flux[:, j], wvals[:, j], pts[:, j] = Fj, Wj, Xj

    ec = mesh.edge_cells
    el = mesh.edge_local_index
    lengths = mesh.edge_lengths
    interior = ec[:, 1] >= 0
    ie = np.nonzero(interior)[0]
    c0, j0, c1, j1 = ec[ie, 0], el[ie, 0], ec[ie, 1], el[ie, 1]
    jump = flux[c0, j0] + flux[c1, j1]  # (n, nq, 2)
    wl = np.outer(lengths[ie], wt)
    if weak:  # own flux minus half the jump
        own0 = flux[c0, j0] - 0.5 * jump
        own1 = flux[c1, j1] - 0.5 * jump
        np.add.at(rho, c0, np.einsum("nq,nqi,nqi->n", wl, own0, wvals[c0, j0]))
        np.add.at(rho, c1, np.einsum("nq,nqi,nqi->n", wl, own1, wvals[c1, j1]))
    else:
        np.add.at(rho, c0, -0.5 * np.einsum("nq,nqi,nqi->n", wl, jump, wvals[c0, j0]))
        np.add.at(rho, c1, -0.5 * np.einsum("nq,nqi,nqi->n", wl, jump, wvals[c1, j1]))

    be = np.nonzero(~interior)[0]
    cb, jb = ec[be, 0], el[be, 0]
    R = np.zeros_like(flux[cb, jb]) if weak else -flux[cb, jb]
    tags = mesh.edge_tags[be]
    for tag, value in tractions.items():
        sel = tags == tag
        if np.any(sel):
            R[sel] += _vector(value, pts[cb[sel], jb[sel]])
    wl = np.outer(lengths[be], wt)
    np.add.at(rho, cb, np.einsum("nq,nqi,nqi->n", wl, R, wvals[cb, jb]))
    return rho


def local_estimators(*args, **kwargs) -> np.ndarray:
    """eta_K = |rho_K| (absolute values of :func:`residual_contributions`)."""
    return np.abs(residual_contributions(*args, **kwargs))


def conservativity(signed: np.ndarray, residual: np.ndarray, w_coefficients: np.ndarray) -> float:
    """Relative mismatch |sum_K rho_K - r(w)| / max(|r(w)|, sum |rho_K|)."""
    total = float(np.sum(signed))
    ref = float(np.asarray(residual) @ np.asarray(w_coefficients))
    scale = max(abs(ref), float(np.sum(np.abs(signed))), 1e-300)
    return abs(total - ref) / scale


def model_error_indicator(a_eps: Callable, u_coarse: Field, z_coarse: Field) -> float:
    """Estimate J(u_fine) - J(u_coarse) ~ -a_eps(u_C, z_C)."""
    return -float(a_eps(u_coarse, z_coarse))


def effectivity(report: DwrReport, reference_error: float) -> DwrReport:
    """Store eta_h / err and sum_K eta_K / err in ``report``."""
    if reference_error == 0:
        raise ZeroDivisionError("reference error is zero")
    if not report.bound_holds(1e-8):
        raise AssertionError(f"eta_h={report.eta_global:.6e} exceeds sum of local indicators {report.sum_local:.6e}")
    err = abs(float(reference_error))
    report.reference_error = err
    report.effectivity_global = report.eta_global / err
    report.effectivity_sum = report.sum_local / err
    return report
