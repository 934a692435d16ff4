"""Conforming triangle meshes with region/boundary tags and bisection refinement.

A :class:`Mesh` is immutable; :func:`refine` and :func:`uniform_refine` return
new meshes.  Cells are stored counter-clockwise.  Local edge ``j`` of a cell is
the edge opposite its local vertex ``j``.

Text format (all indices 0-based)::

    NV NC NBE
    x y                  (NV lines)
    v0 v1 v2 region_tag  (NC lines)
    v0 v1 boundary_tag   (NBE lines)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

# local edge j = (vertex LOCAL_EDGES[j][0], vertex LOCAL_EDGES[j][1]), opposite vertex j
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Base class for mesh validation errors."""


class MeshFormatError(MeshError):
    """The mesh file could not be parsed."""


class InvertedCellError(MeshError):
    """A cell has zero (or numerically vanishing) area."""


class UntaggedBoundaryError(MeshError):
    """A boundary edge carries no tag, or a tagged edge is not on the boundary."""


class NonConformingMeshError(MeshError):
    """Edge-to-cell incidence is inconsistent (hanging nodes, overlaps)."""


def signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def longest_edge(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Local index of the longest edge of every cell (first one on ties)."""
    p = vertices[cells]
    lengths = np.stack(
        [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in LOCAL_EDGES], axis=1
    )
    return np.argmax(lengths, axis=1)


def _edge_keys(a: np.ndarray, b: np.ndarray, nv: int) -> np.ndarray:
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * nv + hi


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming 2D triangulation.

    Attributes
    ----------
    vertices : (NV, 2) float array
    cells : (NC, 3) int array, counter-clockwise
    region : (NC,) int array of region tags
    boundary_edges : (NBE, 2) int array of vertex pairs
    boundary_tags : (NBE,) int array
    refinement_edge : (NC,) local edge index used by bisection
    parent : (NC,) parent cell id in the previous mesh, -1 if none
    """

    vertices: np.ndarray
    cells: np.ndarray
    region: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    refinement_edge: np.ndarray = None
    parent: np.ndarray = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2))
        set_(self, "cells", np.ascontiguousarray(self.cells, dtype=np.int64).reshape(-1, 3))
        set_(self, "region", np.asarray(self.region, dtype=np.int64).reshape(-1))
        set_(self, "boundary_edges", np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
        set_(self, "boundary_tags", np.asarray(self.boundary_tags, dtype=np.int64).reshape(-1))
        if self.refinement_edge is None:
            set_(self, "refinement_edge", longest_edge(self.vertices, self.cells))
        else:
            set_(self, "refinement_edge", np.asarray(self.refinement_edge, dtype=np.int64).reshape(-1))
        if self.parent is None:
            set_(self, "parent", -np.ones(len(self.cells), dtype=np.int64))
        else:
            set_(self, "parent", np.asarray(self.parent, dtype=np.int64).reshape(-1))
        for arr in (self.vertices, self.cells, self.region, self.boundary_edges,
                    self.boundary_tags, self.refinement_edge, self.parent):
            arr.setflags(write=False)
        if self.validate:
            self.check()

    # -- sizes -------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    # -- topology ----------------------------------------------------------
    @cached_property
    def _edge_data(self):
        nv = self.num_vertices
        a = self.cells[:, LOCAL_EDGES[:, 0]]
        b = self.cells[:, LOCAL_EDGES[:, 1]]
        keys = _edge_keys(a, b, nv).ravel()
        uniq, inverse = np.unique(keys, return_inverse=True)
        edges = np.stack([uniq // nv, uniq % nv], axis=1)
        cell_edges = inverse.reshape(-1, 3)
        return edges, cell_edges

    @cached_property
    def edges(self) -> np.ndarray:
        """(NE, 2) unique edges, each stored as (low, high) vertex index."""
        return self._edge_data[0]

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """(NC, 3) global edge index of local edge j (opposite local vertex j)."""
        return self._edge_data[1]

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """(NE, 2) incident cells per edge; second entry -1 on the boundary.

        Raises NonConformingMeshError if an edge has more than two cells.
        """
        ne = self.num_edges
        counts = np.bincount(self.cell_edges.ravel(), minlength=ne)
        if np.any(counts > 2):
            raise NonConformingMeshError(f"{int(np.sum(counts > 2))} edges shared by more than 2 cells")
        out = -np.ones((ne, 2), dtype=np.int64)
        flat_edges = self.cell_edges.ravel()
        flat_cells = np.repeat(np.arange(self.num_cells), 3)
        order = np.argsort(flat_edges, kind="stable")
        e_sorted = flat_edges[order]
        c_sorted = flat_cells[order]
        first = np.ones(len(e_sorted), dtype=bool)
        first[1:] = e_sorted[1:] != e_sorted[:-1]
        out[e_sorted[first], 0] = c_sorted[first]
        out[e_sorted[~first], 1] = c_sorted[~first]
        return out

    @cached_property
    def edge_local_index(self) -> np.ndarray:
        """(NE, 2) local edge index of each edge within its incident cells (-1 if none)."""
        out = -np.ones((self.num_edges, 2), dtype=np.int64)
        ec = self.edge_cells
        for side in range(2):
            has = ec[:, side] >= 0
            cells = ec[has, side]
            loc = np.argmax(self.cell_edges[cells] == np.nonzero(has)[0][:, None], axis=1)
            out[has, side] = loc
        return out

    @cached_property
    def edge_tags(self) -> np.ndarray:
        """(NE,) boundary tag per global edge, -1 for interior edges."""
        tags = -np.ones(self.num_edges, dtype=np.int64)
        idx = self.find_edges(self.boundary_edges)
        tags[idx] = self.boundary_tags
        return tags

    def find_edges(self, pairs: np.ndarray) -> np.ndarray:
        """Global edge indices of vertex pairs; raises KeyError for unknown pairs."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        nv = self.num_vertices
        keys = _edge_keys(pairs[:, 0], pairs[:, 1], nv)
        all_keys = self.edges[:, 0] * nv + self.edges[:, 1]
        pos = np.searchsorted(all_keys, keys)
        pos = np.minimum(pos, len(all_keys) - 1)
        bad = all_keys[pos] != keys
        if np.any(bad):
            raise KeyError(f"{int(bad.sum())} vertex pairs are not mesh edges, e.g. {pairs[bad][0].tolist()}")
        return pos

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        return np.nonzero(self.edge_cells[:, 1] < 0)[0]

    # -- geometry ----------------------------------------------------------
    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.cells)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(NC, 2, 2) affine map Jacobians, columns x1-x0 and x2-x0."""
        p = self.vertices[self.cells]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def inv_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def cell_outward_normals(self) -> np.ndarray:
        """(NC, 3, 2) unit outward normals of the three local edges."""
        p = self.vertices[self.cells]
        out = np.empty((self.num_cells, 3, 2))
        for j, (a, b) in enumerate(LOCAL_EDGES):
            t = p[:, b] - p[:, a]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)  # right of a->b is outside for CCW
            out[:, j] = n / np.linalg.norm(n, axis=1)[:, None]
        return out

    def min_angles(self) -> np.ndarray:
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return np.min(np.stack(angles, axis=1), axis=1)

    def cells_in(self, tags) -> np.ndarray:
        """Boolean mask of cells whose region tag is in ``tags`` (int or iterable)."""
        tags = np.atleast_1d(np.asarray(tags if tags is not None else [], dtype=np.int64))
        return np.isin(self.region, tags)

    # -- validation --------------------------------------------------------
    def check(self) -> None:
        """Validate orientation, incidence and boundary tagging."""
        if np.any(self.cells < 0) or np.any(self.cells >= self.num_vertices):
            raise MeshFormatError("cell vertex index out of range")
        scale = max(np.ptp(self.vertices[:, 0]), np.ptp(self.vertices[:, 1]), 1e-300) ** 2
        areas = self.areas
        bad = np.nonzero(areas <= 1e-14 * scale)[0]
        if len(bad):
            raise InvertedCellError(f"cell {int(bad[0])} has non-positive area {areas[bad[0]]:.3e}")
        if len(self.region) != self.num_cells or len(self.refinement_edge) != self.num_cells:
            raise MeshFormatError("per-cell arrays do not match the cell count")
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshFormatError("boundary tag count does not match boundary edge count")
        ec = self.edge_cells
        boundary = set(self.boundary_edge_ids.tolist())
        try:
            tagged = self.find_edges(self.boundary_edges)
        except KeyError as exc:
            raise UntaggedBoundaryError(str(exc)) from None
        tagged_set = set(tagged.tolist())
        if len(tagged_set) != len(tagged):
            raise UntaggedBoundaryError("a boundary edge is tagged more than once")
        missing = boundary - tagged_set
        if missing:
            e = self.edges[min(missing)]
            raise UntaggedBoundaryError(f"boundary edge ({e[0]}, {e[1]}) has no tag")
        extra = tagged_set - boundary
        if extra:
            e = self.edges[min(extra)]
            raise NonConformingMeshError(f"tagged edge ({e[0]}, {e[1]}) is not on the boundary")
        del ec

    def replace(self, **changes) -> "Mesh":
        data = dict(vertices=self.vertices, cells=self.cells, region=self.region,
                    boundary_edges=self.boundary_edges, boundary_tags=self.boundary_tags,
                    refinement_edge=self.refinement_edge, parent=self.parent)
        data.update(changes)
        return Mesh(**data)


def check_conformity(mesh: Mesh) -> int:
    """Return the number of hanging-node edges (0 for a conforming mesh).

    Counts edges with a single incident cell that are not tagged boundary
    edges, plus edges shared by more than two cells.
    """
    counts = np.bincount(mesh.cell_edges.ravel(), minlength=mesh.num_edges)
    single = set(np.nonzero(counts == 1)[0].tolist())
    tagged = set(mesh.find_edges(mesh.boundary_edges).tolist())
    return len(single - tagged) + int(np.sum(counts > 2))


# -- I/O -------------------------------------------------------------------
def load_mesh(path) -> Mesh:
    """Read a mesh in the documented text format.

    Clockwise cells are reoriented with a warning; degenerate cells raise
    :class:`InvertedCellError`; untagged boundary edges raise
    :class:`UntaggedBoundaryError`.
    """
    text = Path(path).read_text()
    tokens = text.split()
    try:
        nv, nc, nbe = (int(t) for t in tokens[:3])
        expected = 3 + 2 * nv + 4 * nc + 3 * nbe
        if len(tokens) != expected:
            raise MeshFormatError(f"{path}: expected {expected} tokens from header, found {len(tokens)}")
        pos = 3
        vertices = np.array(tokens[pos:pos + 2 * nv], dtype=float).reshape(nv, 2)
        pos += 2 * nv
        cell_data = np.array(tokens[pos:pos + 4 * nc], dtype=np.int64).reshape(nc, 4)
        pos += 4 * nc
        bdata = np.array(tokens[pos:pos + 3 * nbe], dtype=np.int64).reshape(nbe, 3)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"{path}: {exc}") from None
    cells = cell_data[:, :3].copy()
    if np.any(cells < 0) or np.any(cells >= nv):
        raise MeshFormatError(f"{path}: cell vertex index out of range")
    areas = signed_areas(vertices, cells)
    flip = areas < 0
    if np.any(flip):
        warnings.warn(f"{path}: {int(flip.sum())} clockwise cells reoriented", stacklevel=2)
        cells[flip] = cells[flip][:, [0, 2, 1]]
    return Mesh(vertices, cells, cell_data[:, 3], bdata[:, :2], bdata[:, 2])


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.num_vertices} {mesh.num_cells} {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.cells, mesh.region)]
    lines += [f"{a} {b} {t}" for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


# -- marking -----------------------------------------------------------------
def dorfler_mark(indicators, alpha: float) -> np.ndarray:
    """Minimal descending-order prefix whose indicator sum reaches ``alpha`` of the total.

    Ties are broken by ascending cell index.  Returns the selected cell ids in
    selection order.  An all-zero indicator vector marks nothing.
    """
    eta = np.asarray(indicators, dtype=float).ravel()
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if np.any(eta < 0) or np.any(~np.isfinite(eta)):
        raise ValueError("indicators must be finite and non-negative")
    total = eta.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-eta, kind="stable")
    csum = np.cumsum(eta[order])
    m = int(np.searchsorted(csum >= alpha * total, True))
    return order[: m + 1]


# -- refinement --------------------------------------------------------------
def _rotate_to_refinement_edge(cells: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Cyclically rotate cells so the refinement edge is (v0, v1)."""
    idx = (ref[:, None] + np.array([1, 2, 0])[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


REFINE_MODES = ("bisect", "bisect3")


def refine(mesh: Mesh, marked, mode: str = "bisect") -> Mesh:
    """Newest-vertex bisection of the marked cells with conforming closure.

    ``mode='bisect'`` splits the refinement edge of every marked cell (one
    bisection); ``mode='bisect3'`` splits all three edges, so each marked
    cell becomes four children.  Neighbours are bisected as needed so that
    no hanging nodes remain.  Children inherit region tags, split boundary
    edges inherit boundary tags.
    """
    if mode not in REFINE_MODES:
        raise ValueError(f"unknown refinement mode {mode!r}; choose from {REFINE_MODES}")
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if len(marked) == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.num_cells:
        raise IndexError("marked cell id out of range")
    nv = mesh.num_vertices
    cells = _rotate_to_refinement_edge(mesh.cells, mesh.refinement_edge)
    a, b, c = cells[:, 0], cells[:, 1], cells[:, 2]
    # after rotation: ref edge (a,b) = local 2, left edge (c,a) = local 1, right edge (b,c) = local 0
    ce = mesh.cell_edges
    ce_rot = np.take_along_axis(ce, ((mesh.refinement_edge[:, None] + np.array([1, 2, 0])) % 3), axis=1)
    e_right, e_left, e_ref = ce_rot[:, 0], ce_rot[:, 1], ce_rot[:, 2]

    edge_marked = np.zeros(mesh.num_edges, dtype=bool)
    edge_marked[e_ref[marked]] = True
    if mode == "bisect3":
        edge_marked[e_left[marked]] = True
        edge_marked[e_right[marked]] = True
    while True:
        need = (edge_marked[e_left] | edge_marked[e_right]) & ~edge_marked[e_ref]
        if not np.any(need):
            break
        edge_marked[e_ref[need]] = True

    mid = -np.ones(mesh.num_edges, dtype=np.int64)
    me = np.nonzero(edge_marked)[0]
    mid[me] = nv + np.arange(len(me))
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[mesh.edges[me, 0]] + mesh.vertices[mesh.edges[me, 1]])])

    R = edge_marked[e_ref]
    L = edge_marked[e_left]
    Rt = edge_marked[e_right]
    ids = np.arange(mesh.num_cells)

    out_cells, out_parent, out_ref = [], [], []

    keep = ~R
    out_cells.append(mesh.cells[keep])
    out_parent.append(ids[keep])
    out_ref.append(mesh.refinement_edge[keep])

    m = mid[e_ref]
    # child 1 = [c, a, m] (ref edge (c,a)); child 2 = [b, c, m] (ref edge (b,c))
    c1_plain = R & ~L
    out_cells.append(np.stack([c[c1_plain], a[c1_plain], m[c1_plain]], axis=1))
    out_parent.append(ids[c1_plain])
    c1_split = R & L
    m1 = mid[e_left]
    out_cells.append(np.stack([m[c1_split], c[c1_split], m1[c1_split]], axis=1))
    out_cells.append(np.stack([a[c1_split], m[c1_split], m1[c1_split]], axis=1))
    out_parent += [ids[c1_split], ids[c1_split]]

    c2_plain = R & ~Rt
    out_cells.append(np.stack([b[c2_plain], c[c2_plain], m[c2_plain]], axis=1))
    out_parent.append(ids[c2_plain])
    c2_split = R & Rt
    m2 = mid[e_right]
    out_cells.append(np.stack([m[c2_split], b[c2_split], m2[c2_split]], axis=1))
    out_cells.append(np.stack([c[c2_split], m[c2_split], m2[c2_split]], axis=1))
    out_parent += [ids[c2_split], ids[c2_split]]

    n_new = sum(len(x) for x in out_cells[1:])
    out_ref.append(np.full(n_new, 2, dtype=np.int64))  # refinement edge (v0, v1)

    new_cells = np.vstack(out_cells)
    parent = np.concatenate(out_parent)
    ref = np.concatenate(out_ref)

    be = mesh.boundary_edges
    bidx = mesh.find_edges(be)
    split = edge_marked[bidx]
    bm = mid[bidx[split]]
    new_be = np.vstack([be[~split],
                        np.stack([be[split, 0], bm], axis=1),
                        np.stack([bm, be[split, 1]], axis=1)])
    new_bt = np.concatenate([mesh.boundary_tags[~split], mesh.boundary_tags[split], mesh.boundary_tags[split]])
    return Mesh(new_vertices, new_cells, mesh.region[parent], new_be, new_bt, ref, parent, validate=False)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: each cell is replaced by four similar children."""
    nv = mesh.num_vertices
    ne = mesh.num_edges
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])])
    a, b, c = mesh.cells.T
    ce = mesh.cell_edges + nv
    m_bc, m_ca, m_ab = ce[:, 0], ce[:, 1], ce[:, 2]
    children = np.stack([
        np.stack([a, m_ab, m_ca], axis=1),
        np.stack([m_ab, b, m_bc], axis=1),
        np.stack([m_ca, m_bc, c], axis=1),
        np.stack([m_bc, m_ca, m_ab], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.num_cells), 4)
    ref = np.repeat(mesh.refinement_edge, 4)  # each child has an edge parallel to the parent's
    be = mesh.boundary_edges
    bm = mesh.find_edges(be) + nv
    new_be = np.vstack([np.stack([be[:, 0], bm], axis=1), np.stack([bm, be[:, 1]], axis=1)])
    new_bt = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])
    del ne
    return Mesh(new_vertices, children, mesh.region[parent], new_be, new_bt, ref, parent, validate=False)


def unit_square(n: int = 1, tags=(1, 2, 3, 4), region: int = 0, diagonal: str = "right") -> Mesh:
    """Structured mesh of [0,1]^2 with n x n squares split into two triangles.

    Boundary tags are (bottom, right, top, left).  ``n=1`` gives the smallest
    conforming mesh: 4 vertices, 2 cells.
    """
    return rectangle_mesh(0.0, 1.0, 0.0, 1.0, n, n, tags=tags, region=region, diagonal=diagonal)


def rectangle_mesh(x0, x1, y0, y1, nx, ny, tags=(1, 2, 3, 4), region=0, diagonal="right") -> Mesh:
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    if diagonal == "right":
        cells = np.vstack([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    elif diagonal == "left":
        cells = np.vstack([np.stack([v00, v10, v01], 1), np.stack([v10, v11, v01], 1)])
    else:
        raise ValueError(diagonal)
    bottom = np.stack([idx[0, :-1], idx[0, 1:]], 1)
    right = np.stack([idx[:-1, -1], idx[1:, -1]], 1)
    top = np.stack([idx[-1, 1:], idx[-1, :-1]], 1)
    left = np.stack([idx[1:, 0], idx[:-1, 0]], 1)
    be = np.vstack([bottom, right, top, left])
    bt = np.concatenate([np.full(nx, tags[0]), np.full(ny, tags[1]), np.full(nx, tags[2]), np.full(ny, tags[3])])
    return Mesh(vertices, cells, np.full(len(cells), region), be, bt)
