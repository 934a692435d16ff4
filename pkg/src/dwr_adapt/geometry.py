"""Proxy geometries meshed with shapely (planar set operations) and triangle.

Each builder returns a :class:`~dwr_adapt.mesh.Mesh` with region and boundary
tags; the tag conventions are listed in the builder docstrings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
import triangle
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

from .mesh import Mesh, signed_areas


def _segments_from_lines(lines, snap: float):
    """Noded vertex/segment arrays from a collection of line geometries."""
    noded = unary_union(lines)
    parts = list(getattr(noded, "geoms", [noded]))
    keys: dict[tuple, int] = {}
    verts, segs = [], []

    def vid(xy):
        k = (round(xy[0] / snap), round(xy[1] / snap))
        if k not in keys:
            keys[k] = len(verts)
            verts.append(xy)
        return keys[k]

    for part in parts:
        coords = np.asarray(part.coords)
        for a, b in zip(coords[:-1], coords[1:]):
            ia, ib = vid(tuple(a)), vid(tuple(b))
            if ia != ib:
                segs.append((min(ia, ib), max(ia, ib)))
    segs = sorted(set(segs))
    return np.array(verts, dtype=float), np.array(segs, dtype=np.int64)


def triangulate_regions(domain: Polygon, regions: list[tuple[int, Polygon]], max_area: float,
                        boundary_tagger, min_angle: float = 30.0, extra_lines=()) -> Mesh:
    """Quality triangulation of ``domain`` whose cells respect region polygons.

    ``regions`` is an ordered list of (tag, polygon); later entries take
    precedence where polygons overlap, and cells outside all polygons get the
    first tag.  ``boundary_tagger(midpoints (N, 2)) -> tags (N,)`` labels
    boundary edges.
    """
    lines = [domain.boundary] + list(extra_lines)
    pieces = []
    covered = Polygon()
    for tag, poly in reversed(regions):
        piece = poly.intersection(domain).difference(covered)
        covered = covered.union(poly)
        if not piece.is_empty:
            pieces.append((tag, piece))
            lines.append(piece.boundary)
    scale = max(domain.bounds[2] - domain.bounds[0], domain.bounds[3] - domain.bounds[1])
    verts, segs = _segments_from_lines(lines, 1e-9 * scale)
    holes = [np.asarray(Polygon(r).representative_point().coords[0]) for r in domain.interiors]
    region_list = []
    for tag, piece in pieces:
        for g in getattr(piece, "geoms", [piece]):
            if g.area > 0:
                pt = g.representative_point()
                region_list.append([pt.x, pt.y, float(tag), 0.0])
    data = dict(vertices=verts, segments=segs)
    if holes:
        data["holes"] = np.array(holes)
    if region_list:
        data["regions"] = np.array(region_list)
    tri = triangle.triangulate(data, f"pq{min_angle:g}a{max_area:.12g}A")
    V = tri["vertices"]
    C = tri["triangles"].astype(np.int64)
    attr = tri.get("triangle_attributes", np.zeros((len(C), 1)))[:, 0].astype(np.int64)
    if not region_list:
        attr[:] = regions[0][0] if regions else 0
    flip = signed_areas(V, C) < 0
    C[flip] = C[flip][:, [0, 2, 1]]
    # drop unused vertices
    used = np.unique(C)
    remap = -np.ones(len(V), dtype=np.int64)
    remap[used] = np.arange(len(used))
    V, C = V[used], remap[C]
    m = Mesh(V, C, attr, np.zeros((0, 2)), np.zeros(0), validate=False)
    be = m.edges[m.boundary_edge_ids]
    # orient boundary edges along their cell (counter-clockwise)
    cells = m.edge_cells[m.boundary_edge_ids, 0]
    loc = m.edge_local_index[m.boundary_edge_ids, 0]
    from .mesh import LOCAL_EDGES
    be = np.stack([C[cells, LOCAL_EDGES[loc, 0]], C[cells, LOCAL_EDGES[loc, 1]]], axis=1)
    mids = 0.5 * (V[be[:, 0]] + V[be[:, 1]])
    tags = np.asarray(boundary_tagger(mids), dtype=np.int64)
    return Mesh(V, C, attr, be, tags)


def circle(center, radius, n: int) -> Polygon:
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return Polygon(np.stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)], 1))


def ellipse(center, a, b, n: int) -> Polygon:
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return Polygon(np.stack([center[0] + a * np.cos(t), center[1] + b * np.sin(t)], 1))


def in_ellipse(pts, center, axes) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    (cx, cy), (a, b) = center, axes
    return ((pts[..., 0] - cx) / a) ** 2 + ((pts[..., 1] - cy) / b) ** 2 < 1.0


def ellipse_locator(center, axes, inside: int, outside: int):
    """Region-tag function: ``inside`` within the axis-aligned ellipse, else ``outside``."""

    def locate(pts):
        return np.where(in_ellipse(pts, center, axes), inside, outside)

    return locate


# ---------------------------------------------------------------------------
# artery proxy
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ArteryGeometry:
    """Parameterised cross-section of a diseased artery (lengths in mm).

    Region tags: 1 tissue, 2 necrotic core, 3 media (fibres), 4 region of
    interest.  Boundary tags: 1 clamped outer arc, 2 free outer boundary,
    3 lumen.

    With ``resolve_core=False`` the core outline is not a mesh interface;
    use :meth:`core_locator` to sample the core at quadrature points.
    """

    outer_radius: float = 2.5
    media_inner_radius: float = 2.1
    lumen_center: tuple = (0.6, 0.0)
    lumen_radius: float = 0.9
    core_center: tuple = (-1.05, 0.0)
    core_axes: tuple = (0.45, 1.0)
    roi: tuple = (-0.58, -0.4, -0.32, 0.4)  # xmin, ymin, xmax, ymax
    clamp_half_angle_deg: float = 40.0
    clamp_center_deg: float = 160.0
    n_outer: int = 96
    n_lumen: int = 48
    n_core: int = 40
    max_area: float = 0.04
    resolve_core: bool = False

    def in_core(self, pts: np.ndarray) -> np.ndarray:
        return in_ellipse(pts, self.core_center, self.core_axes)

    def core_locator(self, background: int = 1, core: int = 2):
        """Callable mapping points to ``core`` inside the core ellipse, else ``background``."""
        return ellipse_locator(self.core_center, self.core_axes, core, background)

    def build(self) -> Mesh:
        R = self.outer_radius
        th0 = np.deg2rad(self.clamp_center_deg)
        half = np.deg2rad(self.clamp_half_angle_deg)
        # outer polygon with the clamp end points as vertices
        t = np.linspace(0, 2 * np.pi, self.n_outer, endpoint=False)
        t = np.unique(np.mod(np.concatenate([t, [th0 - half, th0 + half]]), 2 * np.pi))
        outer = Polygon(np.stack([R * np.cos(t), R * np.sin(t)], 1))
        lumen = circle(self.lumen_center, self.lumen_radius, self.n_lumen)
        domain = outer.difference(lumen)
        media = outer.difference(circle((0, 0), self.media_inner_radius, self.n_outer))
        core = ellipse(self.core_center, *self.core_axes, self.n_core)
        roi = box(*self.roi)
        regions = [(1, outer), (3, media)] + ([(2, core)] if self.resolve_core else []) + [(4, roi)]
        rl = self.lumen_radius
        lc = np.asarray(self.lumen_center)

        def tagger(mid):
            on_lumen = np.abs(np.linalg.norm(mid - lc, axis=1) - rl) < 0.05 * rl
            ang = np.angle(np.exp(1j * (np.arctan2(mid[:, 1], mid[:, 0]) - th0)))
            tags = np.where(np.abs(ang) <= half, 1, 2)
            return np.where(on_lumen, 3, tags)

        return triangulate_regions(domain, regions, self.max_area, tagger)


# ---------------------------------------------------------------------------
# silicone sheet proxy
# ---------------------------------------------------------------------------
SILICONE_HOLES = ((-47.5, -21.4), (-14.0, -23.0), (-31.5, -41.0), (-47.7, -59.1), (-14.5, -58.0))


@dataclass(frozen=True)
class SiliconeGeometry:
    """Perforated silicone sheet: rectangle with five holes and one slit (mm).

    Region tag 1.  Boundary tags: 1 clamped bottom edge, 2 pulled top edge,
    3 free boundaries (sides, holes, slit).
    """

    width: float = 61.5
    height: float = 82.5
    hole_radius: float = 10.0
    holes: tuple = SILICONE_HOLES
    slit_eps: float = 0.2
    n_hole: int = 48
    max_area: float = 8.0

    def build(self) -> Mesh:
        plate = box(-self.width, -self.height, 0.0, 0.0)
        cut = [circle(c, self.hole_radius, self.n_hole) for c in self.holes]
        (c1x, c1y), (c3x, c3y) = self.holes[0], self.holes[2]
        e = self.slit_eps
        slit = Polygon([(c1x + e, c1y + e), (c3x + e, c3y + e), (c3x - e, c3y - e), (c1x - e, c1y - e)])
        domain = plate.difference(unary_union(cut + [slit]))
        domain = shapely.set_precision(domain, 1e-9) if hasattr(shapely, "set_precision") else domain
        H = self.height
        tol = 1e-6

        def tagger(mid):
            tags = np.full(len(mid), 3)
            tags[np.abs(mid[:, 1] + H) < tol] = 1
            tags[np.abs(mid[:, 1]) < tol] = 2
            return tags

        return triangulate_regions(domain, [(1, plate)], self.max_area, tagger)


# ---------------------------------------------------------------------------
# two-subdomain square for the interaction toy
# ---------------------------------------------------------------------------
def two_subdomain_square(n: int = 8, interface: float = 0.5) -> Mesh:
    """Structured unit square; region 1 (fluid) for y > interface, 2 (solid) below.

    Boundary tags (bottom, right, top, left) = (1, 2, 3, 4).
    """
    from .mesh import rectangle_mesh

    m = rectangle_mesh(0.0, 1.0, 0.0, 1.0, n, n, diagonal="right")
    region = np.where(m.centroids[:, 1] > interface, 1, 2)
    return m.replace(region=region)

