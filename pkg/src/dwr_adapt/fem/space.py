"""Continuous Lagrange spaces of degree 1-3 on triangle meshes.

Local node numbering: the three vertices, then ``k-1`` nodes on each local
edge (edge ``j`` opposite vertex ``j``, traversed in the direction given by
``LOCAL_EDGES``), then interior nodes.  Vector spaces interleave components,
so dof ``node * ncomp + c``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np

from ..mesh import LOCAL_EDGES, Mesh


# ---------------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------------
def _monomial_exponents(k: int) -> np.ndarray:
    return np.array([(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)])


def reference_nodes(k: int) -> np.ndarray:
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v for v in verts]
    for s, e in LOCAL_EDGES:
        for i in range(1, k):
            t = i / k
            nodes.append((1 - t) * verts[s] + t * verts[e])
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append(np.array([i / k, j / k]))
    return np.array(nodes)


class ReferenceElement:
    """Nodal Lagrange basis of degree ``k`` on the reference triangle."""

    def __init__(self, degree: int):
        if degree not in (1, 2, 3, 4):
            raise ValueError(f"unsupported Lagrange degree {degree}")
        self.degree = degree
        self.nodes = reference_nodes(degree)
        self.exponents = _monomial_exponents(degree)
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)  # phi_i = sum_j m_j * coeffs[j, i]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts, dx=0, dy=0):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), len(self.exponents)))
        for j, (a, b) in enumerate(self.exponents):
            if a < dx or b < dy:
                continue
            ca = np.prod(np.arange(a, a - dx, -1)) if dx else 1.0
            cb = np.prod(np.arange(b, b - dy, -1)) if dy else 1.0
            out[:, j] = ca * cb * pts[:, 0] ** (a - dx) * pts[:, 1] ** (b - dy)
        return out

    def values(self, pts) -> np.ndarray:
        """(nq, nloc)"""
        return self._monomials(pts) @ self.coeffs

    def gradients(self, pts) -> np.ndarray:
        """(nq, nloc, 2) reference gradients."""
        return np.stack([self._monomials(pts, 1, 0) @ self.coeffs,
                         self._monomials(pts, 0, 1) @ self.coeffs], axis=2)

    def hessians(self, pts) -> np.ndarray:
        """(nq, nloc, 2, 2) reference Hessians."""
        hxx = self._monomials(pts, 2, 0) @ self.coeffs
        hxy = self._monomials(pts, 1, 1) @ self.coeffs
        hyy = self._monomials(pts, 0, 2) @ self.coeffs
        return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


@lru_cache(maxsize=None)
def reference_element(degree: int) -> ReferenceElement:
    return ReferenceElement(degree)


# ---------------------------------------------------------------------------
# Dirichlet data
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DirichletBC:
    """Prescribed values on all edges carrying ``tag``.

    ``value`` is a constant (scalar or length-``ncomp``) or a callable
    mapping points ``(N, 2)`` to ``(N,)`` / ``(N, ncomp)``.  ``components``
    restricts the constraint to a subset of vector components.
    """

    tag: int
    value: object = 0.0
    components: tuple | None = None


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------
class Space:
    """Continuous Lagrange space of ``degree`` with ``ncomp`` components."""

    def __init__(self, mesh: Mesh, degree: int, ncomp: int = 1, bcs: Sequence[DirichletBC] = ()):
        self.mesh = mesh
        self.degree = int(degree)
        self.ncomp = int(ncomp)
        self.element = reference_element(self.degree)
        self.bcs = tuple(bcs)
        known = set(np.unique(mesh.boundary_tags).tolist())
        for bc in self.bcs:
            if bc.tag not in known:
                raise KeyError(f"Dirichlet tag {bc.tag} is not a boundary tag of the mesh {sorted(known)}")
        self._build_nodes()

    # -- numbering ---------------------------------------------------------
    def _build_nodes(self):
        mesh, k = self.mesh, self.degree
        nv, ne, nc = mesh.num_vertices, mesh.num_edges, mesh.num_cells
        per_edge = k - 1
        per_cell = (k - 1) * (k - 2) // 2
        self.num_nodes = nv + ne * per_edge + nc * per_cell
        cols = [mesh.cells]
        if per_edge:
            for j, (s, e) in enumerate(LOCAL_EDGES):
                ge = mesh.cell_edges[:, j]
                forward = mesh.cells[:, s] < mesh.cells[:, e]
                base = nv + ge * per_edge
                idx = np.arange(per_edge)
                nodes = np.where(forward[:, None], base[:, None] + idx, base[:, None] + per_edge - 1 - idx)
                cols.append(nodes)
        if per_cell:
            start = nv + ne * per_edge
            cols.append(start + np.arange(nc)[:, None] * per_cell + np.arange(per_cell))
        self.cell_nodes = np.hstack(cols).astype(np.int64)
        coords = np.empty((self.num_nodes, 2))
        ref = self.element.nodes
        p = mesh.vertices[mesh.cells]
        phys = p[:, 0, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians, ref)
        coords[self.cell_nodes.ravel()] = phys.reshape(-1, 2)
        self.node_coords = coords

    @property
    def num_dofs(self) -> int:
        return self.num_nodes * self.ncomp

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(NC, nloc * ncomp) interleaved global dofs."""
        n = self.cell_nodes[:, :, None] * self.ncomp + np.arange(self.ncomp)
        return n.reshape(self.mesh.num_cells, -1)

    def boundary_nodes(self, tags) -> np.ndarray:
        """Sorted node ids on edges whose boundary tag is in ``tags``."""
        tags = np.atleast_1d(tags)
        mesh = self.mesh
        edge_ids = np.nonzero(np.isin(mesh.edge_tags, tags))[0]
        if len(edge_ids) == 0:
            return np.zeros(0, dtype=np.int64)
        nodes = [mesh.edges[edge_ids].ravel()]
        per_edge = self.degree - 1
        if per_edge:
            nodes.append((mesh.num_vertices + edge_ids[:, None] * per_edge + np.arange(per_edge)).ravel())
        return np.unique(np.concatenate(nodes))

    # -- Dirichlet ---------------------------------------------------------
    def dirichlet(self, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Constrained dofs and their values (later conditions override earlier ones)."""
        values: dict[int, float] = {}
        for bc in self.bcs:
            nodes = self.boundary_nodes(bc.tag)
            comps = tuple(range(self.ncomp)) if bc.components is None else tuple(bc.components)
            vals = _evaluate_value(bc.value, self.node_coords[nodes], self.ncomp)
            for c in comps:
                dofs = nodes * self.ncomp + c
                for d, v in zip(dofs.tolist(), vals[:, c].tolist()):
                    values[d] = v
        dofs = np.array(sorted(values), dtype=np.int64)
        vals = np.array([values[d] for d in dofs.tolist()], dtype=float) * scale
        return dofs, vals

    @cached_property
    def fixed_dofs(self) -> np.ndarray:
        return self.dirichlet()[0]

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.num_dofs, dtype=bool)
        mask[self.fixed_dofs] = False
        return np.nonzero(mask)[0]

    def with_bcs(self, bcs: Sequence[DirichletBC]) -> "Space":
        return Space(self.mesh, self.degree, self.ncomp, bcs)

    def homogenized(self) -> "Space":
        """Same space with all Dirichlet values set to zero."""
        return self.with_bcs([DirichletBC(bc.tag, 0.0, bc.components) for bc in self.bcs])

    def enriched(self, extra: int = 1) -> "Space":
        return Space(self.mesh, self.degree + extra, self.ncomp, self.bcs)

    # -- functions -----------------------------------------------------------
    def interpolate_function(self, f: Callable | float | Sequence[float]) -> np.ndarray:
        vals = _evaluate_value(f, self.node_coords, self.ncomp)
        return vals.reshape(-1).copy()

    def tabulate(self, qpts: np.ndarray, derivatives: int = 1, cells=None):
        """Reference values and physical derivatives at reference points.

        Returns ``phi`` (nq, nloc), and if requested ``grad`` (NC, nq, nloc, 2)
        and ``hess`` (NC, nq, nloc, 2, 2), optionally for a subset of cells.
        """
        el = self.element
        phi = el.values(qpts)
        out = [phi]
        invJ = self.mesh.inv_jacobians if cells is None else self.mesh.inv_jacobians[cells]
        if derivatives >= 1:
            out.append(np.einsum("cji,qaj->cqai", invJ, el.gradients(qpts), optimize=True))
        if derivatives >= 2:
            out.append(np.einsum("cji,qajl,clk->cqaik", invJ, el.hessians(qpts), invJ, optimize=True))
        return tuple(out) if len(out) > 1 else out[0]

    def cell_coefficients(self, coeffs: np.ndarray, cells=None) -> np.ndarray:
        """(NC, nloc, ncomp) local coefficient arrays."""
        dofs = self.cell_dofs if cells is None else self.cell_dofs[cells]
        return np.asarray(coeffs)[dofs].reshape(len(dofs), -1, self.ncomp)

    def __repr__(self):
        return f"Space(P{self.degree}, ncomp={self.ncomp}, dofs={self.num_dofs}, cells={self.mesh.num_cells})"


def _evaluate_value(value, pts: np.ndarray, ncomp: int) -> np.ndarray:
    if callable(value):
        v = np.asarray(value(pts), dtype=float)
    else:
        v = np.broadcast_to(np.asarray(value, dtype=float), (len(pts),) + np.shape(value))
    if v.ndim == 1 and (ncomp == 1 or v.shape[0] == len(pts)):
        v = np.broadcast_to(v.reshape(-1, 1), (len(pts), ncomp)) if v.shape[0] == len(pts) else v
    if v.ndim == 1:
        v = np.broadcast_to(v, (len(pts), ncomp))
    if v.shape != (len(pts), ncomp):
        raise ValueError(f"value has shape {v.shape}, expected {(len(pts), ncomp)}")
    return np.array(v)


def build_space(mesh: Mesh, degree: int, components: int = 1, dirichlet=None) -> Space:
    """Build a Lagrange space.

    ``dirichlet`` maps boundary tags to prescribed values (constant or
    callable), or is a sequence of :class:`DirichletBC`.
    """
    if dirichlet is None:
        bcs = ()
    elif isinstance(dirichlet, dict):
        bcs = tuple(DirichletBC(tag, val) for tag, val in dirichlet.items())
    else:
        bcs = tuple(dirichlet)
    return Space(mesh, degree, components, bcs)


class MixedSpace:
    """Concatenation of spaces on one mesh: x = [x_0, x_1, ...]."""

    def __init__(self, spaces: Sequence[Space]):
        self.spaces = tuple(spaces)
        self.mesh = self.spaces[0].mesh
        if any(s.mesh is not self.mesh for s in self.spaces):
            raise ValueError("all subspaces must share one mesh")
        sizes = [s.num_dofs for s in self.spaces]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def num_dofs(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return np.hstack([s.cell_dofs + o for s, o in zip(self.spaces, self.offsets)])

    def dirichlet(self, scale: float = 1.0):
        d, v = zip(*[s.dirichlet(scale) for s in self.spaces])
        return (np.concatenate([di + o for di, o in zip(d, self.offsets)]).astype(np.int64),
                np.concatenate(v))

    @cached_property
    def fixed_dofs(self) -> np.ndarray:
        return self.dirichlet()[0]

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.spaces))]

    def join(self, parts) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def __repr__(self):
        return f"MixedSpace({', '.join(map(repr, self.spaces))})"


@dataclass
class Field:
    """Coefficient vector bound to a space."""

    space: Space
    coefficients: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coefficients is None:
            self.coefficients = np.zeros(self.space.num_dofs)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.num_dofs,):
            raise ValueError(f"coefficient length {self.coefficients.shape} != {self.space.num_dofs}")

    def values(self, qpts: np.ndarray, cells=None) -> np.ndarray:
        """(NC, nq, ncomp) values at reference points of every (or the given) cell."""
        phi = self.space.element.values(qpts)
        return np.einsum("qa,cak->cqk", phi, self.space.cell_coefficients(self.coefficients, cells))

    def gradients(self, qpts: np.ndarray, cells=None) -> np.ndarray:
        """(NC, nq, ncomp, 2) gradients; entry [..., i, j] = d u_i / d x_j."""
        _, G = self.space.tabulate(qpts, 1, cells)
        return np.einsum("cqaj,cai->cqij", G, self.space.cell_coefficients(self.coefficients, cells))

    def hessians(self, qpts: np.ndarray, cells=None) -> np.ndarray:
        """(NC, nq, ncomp, 2, 2)."""
        _, _, H = self.space.tabulate(qpts, 2, cells)
        return np.einsum("cqajk,cai->cqijk", H, self.space.cell_coefficients(self.coefficients, cells))

    def __call__(self, points) -> np.ndarray:
        """Evaluate at physical points (N, 2) -> (N, ncomp)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells, ref = locate_points(self.space.mesh, points)
        phi = self.space.element.values(ref)  # (N, nloc)
        loc = self.space.cell_coefficients(self.coefficients)[cells]  # (N, nloc, ncomp)
        return np.einsum("na,nak->nk", phi, loc)


def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-12):
    """Containing cell and reference coordinates of physical points.

    Raises ValueError for points outside the mesh.
    """
    points = np.atleast_2d(points)
    x0 = mesh.vertices[mesh.cells[:, 0]]
    invJ = mesh.inv_jacobians
    cells = np.empty(len(points), dtype=np.int64)
    refs = np.empty((len(points), 2))
    for i, p in enumerate(points):
        r = np.einsum("cij,cj->ci", invJ, p - x0)
        bary_min = np.minimum(np.minimum(r[:, 0], r[:, 1]), 1.0 - r[:, 0] - r[:, 1])
        c = int(np.argmax(bary_min))
        if bary_min[c] < -tol * 1e3:
            raise ValueError(f"point {p.tolist()} lies outside the mesh")
        cells[i] = c
        refs[i] = r[c]
    return cells, refs


# ---------------------------------------------------------------------------
# transfer operators
# ---------------------------------------------------------------------------
def interpolate(source: Field, target: Space) -> Field:
    """Lagrange interpolant of ``source`` into ``target`` (same mesh)."""
    src = source.space
    if src.mesh is not target.mesh:
        raise ValueError("interpolation requires spaces on the same mesh")
    if src.ncomp != target.ncomp:
        raise ValueError("component count mismatch")
    phi = src.element.values(target.element.nodes)  # (nt, ns)
    local = np.einsum("ta,cak->ctk", phi, src.cell_coefficients(source.coefficients))
    out = np.zeros((target.num_nodes, target.ncomp))
    out[target.cell_nodes.ravel()] = local.reshape(-1, target.ncomp)
    return Field(target, out.ravel())


def embed(source: Field, target: Space) -> Field:
    """Exact representation of a lower-degree field in a higher-degree space."""
    if target.degree < source.space.degree:
        raise ValueError("embedding needs target degree >= source degree")
    return interpolate(source, target)


def transfer(source: Field, target: Space) -> Field:
    """Interpolate a field onto a space over a refined (nested) mesh.

    Target nodes are located in the source mesh through the ``parent``
    chain when available, otherwise by point location.
    """
    tmesh, smesh = target.mesh, source.space.mesh
    if tmesh is smesh:
        return interpolate(source, target)
    if tmesh.num_cells and np.all(tmesh.parent >= 0) and tmesh.parent.max() < smesh.num_cells:
        parents = tmesh.parent
        pts = target.node_coords[target.cell_nodes]  # (NC, nloc, 2)
        x0 = smesh.vertices[smesh.cells[parents, 0]]
        ref = np.einsum("cij,caj->cai", smesh.inv_jacobians[parents], pts - x0[:, None, :])
        el = source.space.element
        phi = el.values(ref.reshape(-1, 2)).reshape(ref.shape[0], ref.shape[1], -1)
        loc = source.space.cell_coefficients(source.coefficients)[parents]
        vals = np.einsum("cta,cak->ctk", phi, loc)
        out = np.zeros((target.num_nodes, target.ncomp))
        out[target.cell_nodes.ravel()] = vals.reshape(-1, target.ncomp)
        return Field(target, out.ravel())
    vals = source(target.node_coords)
    return Field(target, vals.ravel())


def _vertex_patches(mesh: Mesh):
    """CSR-style vertex -> incident cells."""
    cells = mesh.cells.ravel()
    order = np.argsort(cells, kind="stable")
    ptr = np.concatenate([[0], np.cumsum(np.bincount(cells, minlength=mesh.num_vertices))])
    return ptr, order // 3


def extrapolate(source: Field, target: Space) -> Field:
    """Patchwise least-squares lift of a degree-k field to degree k+1.

    For every vertex patch a degree-(k+1) polynomial is fitted to the source
    nodal values of all nodes in the patch, then evaluated at the target
    nodes of the patch.  Overlapping patch values are averaged.  Patches with
    too few nodes are widened to the second vertex ring; patches that remain
    too small or rank deficient are skipped; target nodes not covered
    by any usable patch keep the plain embedding of the source.  Dirichlet
    dofs of ``target`` are set to their prescribed values.
    """
    src = source.space
    mesh = src.mesh
    if target.mesh is not mesh:
        raise ValueError("extrapolation requires spaces on the same mesh")
    if target.degree != src.degree + 1:
        raise ValueError("target degree must be source degree + 1")
    if not np.any(source.coefficients):
        return Field(target, np.zeros(target.num_dofs))
    kk = target.degree
    exps = _monomial_exponents(kk)
    nmono = len(exps)
    ncomp = src.ncomp
    svals = source.coefficients.reshape(-1, ncomp)
    acc = np.zeros((target.num_nodes, ncomp))
    cnt = np.zeros(target.num_nodes)
    ptr, patch_cells = _vertex_patches(mesh)
    skipped = 0

    # group vertices with identical patch sizes to batch the least-squares fits
    groups: dict[tuple[int, int], list] = {}
    for v in range(mesh.num_vertices):
        pc = patch_cells[ptr[v]:ptr[v + 1]]
        snodes = np.unique(src.cell_nodes[pc])
        if len(snodes) < nmono:
            # widen to the second ring before giving up on this vertex
            ring = np.unique(mesh.cells[pc])
            wide = np.unique(np.concatenate([patch_cells[ptr[w]:ptr[w + 1]] for w in ring]))
            snodes = np.unique(src.cell_nodes[wide])
            if len(snodes) < nmono:
                skipped += 1
                continue
        tnodes = np.unique(target.cell_nodes[pc])
        groups.setdefault((len(snodes), len(tnodes)), []).append((v, snodes, tnodes))

    def mono(p):
        return np.stack([p[..., 0] ** a * p[..., 1] ** b for a, b in exps], axis=-1)

    for (ns, nt), items in groups.items():
        v = np.array([it[0] for it in items])
        S = np.array([it[1] for it in items])
        T = np.array([it[2] for it in items])
        center = mesh.vertices[v][:, None, :]
        ps = src.node_coords[S] - center
        scale = np.max(np.abs(ps), axis=(1, 2))[:, None, None]
        A = mono(ps / scale)  # (B, ns, nmono)
        B = mono((target.node_coords[T] - center) / scale)  # (B, nt, nmono)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        ok = s[:, -1] > 1e-8 * s[:, 0]
        skipped += int((~ok).sum())
        if not np.any(ok):
            continue
        U, s, Vt, B, S, T = U[ok], s[ok], Vt[ok], B[ok], S[ok], T[ok]
        rhs = svals[S]  # (B, ns, ncomp)
        coef = np.einsum("bmj,bm,bim,bic->bjc", Vt, 1.0 / s, U, rhs, optimize=True)
        vals = np.einsum("btj,bjc->btc", B, coef)
        np.add.at(acc, T.ravel(), vals.reshape(-1, ncomp))
        np.add.at(cnt, T.ravel(), 1.0)

    base = embed(source, target).coefficients.reshape(-1, ncomp)
    covered = cnt > 0
    out = base.copy()
    out[covered] = acc[covered] / cnt[covered, None]
    out = out.ravel()
    fixed, values = target.dirichlet()
    out[fixed] = values  # constrained dofs keep their prescribed values
    uncovered = int((~covered).sum())
    if uncovered:
        warnings.warn(f"extrapolation: {skipped} vertex patches too small for a degree-{kk} fit; "
                      f"{uncovered} nodes keep the plain embedding", stacklevel=2)
    return Field(target, out)
