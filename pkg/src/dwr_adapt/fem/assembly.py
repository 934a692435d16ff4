"""Sparse assembly, Dirichlet elimination and direct solves."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..mesh import LOCAL_EDGES, Mesh
from .quadrature import interval_rule, triangle_rule
from .space import Space

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a direct factorization meets a (numerically) zero pivot."""

    def __init__(self, message: str, dof: int | None = None):
        super().__init__(message)
        self.dof = dof


# ---------------------------------------------------------------------------
# quadrature data
# ---------------------------------------------------------------------------
class CellQuadrature:
    """Quadrature points and scaled weights on every cell of a mesh."""

    def __init__(self, mesh: Mesh, order: int):
        self.mesh = mesh
        self.order = order
        self.points, self.weights = triangle_rule(order)

    @cached_property
    def dx(self) -> np.ndarray:
        """(NC, nq) weights times |det J|."""
        return np.outer(2.0 * self.mesh.areas, self.weights)

    @cached_property
    def physical_points(self) -> np.ndarray:
        """(NC, nq, 2)"""
        x0 = self.mesh.vertices[self.mesh.cells[:, 0]]
        return x0[:, None, :] + np.einsum("cij,qj->cqi", self.mesh.jacobians, self.points)


def edge_reference_points(local_edge: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates of parameter values ``t`` along a local edge."""
    s, e = LOCAL_EDGES[local_edge]
    t = np.asarray(t)[:, None]
    return (1.0 - t) * _REF_VERTS[s] + t * _REF_VERTS[e]


def edge_quadrature(order: int):
    """Gauss points ``t`` in [0, 1] and weights summing to 1 (multiply by edge length)."""
    return interval_rule(order)


# ---------------------------------------------------------------------------
# scatter
# ---------------------------------------------------------------------------
def assemble_matrix(row_dofs: np.ndarray, col_dofs: np.ndarray, local: np.ndarray,
                    shape: tuple[int, int]) -> sp.csr_matrix:
    """Sum local matrices ``local[c]`` into rows ``row_dofs[c]`` and columns ``col_dofs[c]``."""
    nc, nr = row_dofs.shape
    ncol = col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (nc, nr, ncol)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (nc, nr, ncol)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    K.sum_duplicates()
    return K


def assemble_vector(dofs: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n).astype(float)


# ---------------------------------------------------------------------------
# Dirichlet elimination
# ---------------------------------------------------------------------------
@dataclass
class SparseSystem:
    """Reduced linear system on the unconstrained dofs.

    ``matrix`` and ``rhs`` act on ``free`` dofs only; ``expand`` rebuilds the
    full coefficient vector including the prescribed values.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    size: int

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.free] = x_free
        x[self.fixed] = self.fixed_values
        return x


def condense(K: sp.spmatrix, f: np.ndarray, fixed=None, values=None) -> SparseSystem:
    """Symmetric elimination: K_FF x_F = f_F - K_FD g."""
    n = K.shape[0]
    fixed = np.zeros(0, dtype=np.int64) if fixed is None else np.asarray(fixed, dtype=np.int64)
    values = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    K = sp.csr_matrix(K)
    rhs = np.asarray(f, dtype=float)[free]
    if len(fixed) and np.any(values):
        rhs = rhs - K[free][:, fixed] @ values
    return SparseSystem(K[free][:, free].tocsc(), rhs, free, fixed, values, n)


# ---------------------------------------------------------------------------
# direct solve
# ---------------------------------------------------------------------------
def solve(system, rhs=None) -> np.ndarray:
    """Direct sparse LU solve.

    Accepts a :class:`SparseSystem` (returns the *full* vector) or a matrix
    and right-hand side (returns the solution of ``A x = b``).  Singular
    matrices raise :class:`SingularMatrixError` naming a suspect dof.
    """
    if isinstance(system, SparseSystem):
        return system.expand(solve(system.matrix, system.rhs))
    A = sp.csc_matrix(system)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    absA = abs(A)
    row_norm = np.asarray(absA.sum(axis=1)).ravel()
    col_norm = np.asarray(absA.sum(axis=0)).ravel()
    zero = np.nonzero((row_norm == 0) | (col_norm == 0))[0]
    if len(zero):
        raise SingularMatrixError(f"matrix is singular: empty row/column at dof {int(zero[0])}", int(zero[0]))
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularMatrixError(f"matrix is singular ({exc})") from None
    diag = np.abs(lu.U.diagonal())
    scale = max(float(np.max(np.abs(A.data))), 1e-300)
    small = np.nonzero(diag <= 1e-14 * scale)[0]
    if len(small):
        dof = int(lu.perm_c[small[0]])
        raise SingularMatrixError(f"matrix is singular: zero pivot at dof {dof}", dof)
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("matrix is singular: non-finite solution")
    return x


def factorize(A):
    """Reusable LU factorization (``.solve(b)``, ``.solve(b, trans='T')``)."""
    return spla.splu(sp.csc_matrix(A))


# ---------------------------------------------------------------------------
# scalar model forms
# ---------------------------------------------------------------------------
def _coefficient(coef, quad: CellQuadrature):
    if coef is None:
        return np.ones_like(quad.dx)
    if callable(coef):
        return np.asarray(coef(quad.physical_points), dtype=float)
    c = np.asarray(coef, dtype=float)
    if c.ndim == 1 and len(c) == quad.mesh.num_cells:
        return np.broadcast_to(c[:, None], quad.dx.shape)
    return np.broadcast_to(c, quad.dx.shape)


def stiffness_matrix(space: Space, coef=None, order: int | None = None, cells=None) -> sp.csr_matrix:
    """Scalar Laplace stiffness (coef grad u, grad v), optionally restricted to a cell mask."""
    if space.ncomp != 1:
        raise ValueError("stiffness_matrix expects a scalar space")
    quad = CellQuadrature(space.mesh, order if order is not None else 2 * space.degree)
    _, G = space.tabulate(quad.points, 1)
    w = quad.dx * _coefficient(coef, quad)
    if cells is not None:
        w = w * np.asarray(cells, dtype=float)[:, None]
    local = np.einsum("cq,cqai,cqbi->cab", w, G, G, optimize=True)
    return assemble_matrix(space.cell_dofs, space.cell_dofs, local, (space.num_dofs,) * 2)


def mass_matrix(space: Space, coef=None, order: int | None = None) -> sp.csr_matrix:
    quad = CellQuadrature(space.mesh, order if order is not None else 2 * space.degree + 1)
    phi = space.element.values(quad.points)
    w = quad.dx * _coefficient(coef, quad)
    local = np.einsum("cq,qa,qb->cab", w, phi, phi, optimize=True)
    if space.ncomp > 1:
        eye = np.eye(space.ncomp)
        local = np.einsum("cab,ij->caibj", local, eye).reshape(space.mesh.num_cells, *(2 * [phi.shape[1] * space.ncomp]))
    return assemble_matrix(space.cell_dofs, space.cell_dofs, local, (space.num_dofs,) * 2)


def load_vector(space: Space, f, order: int | None = None, cells=None) -> np.ndarray:
    """(f, v) for a callable ``f(points (..., 2)) -> (...,) or (..., ncomp)``."""
    quad = CellQuadrature(space.mesh, order if order is not None else 2 * space.degree + 2)
    phi = space.element.values(quad.points)
    fv = np.asarray(f(quad.physical_points), dtype=float)
    if fv.ndim == 2:
        fv = fv[..., None]
    fv = np.broadcast_to(fv, quad.dx.shape + (space.ncomp,))
    w = quad.dx
    if cells is not None:
        w = w * np.asarray(cells, dtype=float)[:, None]
    local = np.einsum("cq,qa,cqk->cak", w, phi, fv).reshape(space.mesh.num_cells, -1)
    return assemble_vector(space.cell_dofs, local, space.num_dofs)
