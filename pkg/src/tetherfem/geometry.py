"""Triangulations of matrix domains with circular cell holes.

Builds shape-regular conforming meshes of a disk or rectangle minus a set
of contracting-cell circles, the edge topology needed by interior-penalty
assembly, uniform refinement with circle-boundary projection, and a plain
text mesh format.

Vertex tags: 0 = untagged (interior), 1 = outer boundary, 2 + i = boundary
of cell i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

TAG_NONE = 0
TAG_OUTER = 1
TAG_CELL0 = 2  # cell i carries tag TAG_CELL0 + i

# deterministic jitter applied to interior lattice points; breaks the exact
# co-circularity of the hex lattice against circle points before Delaunay
_JITTER_SEED = 20240901
_JITTER_FRAC = 0.02


class DomainError(ValueError):
    """Invalid domain specification (overlapping cells, bad sizes, ...)."""


class TopologyError(RuntimeError):
    """Mesh violates conformity (hanging vertex, broken edge incidence)."""


@dataclass(frozen=True)
class Cell:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class DomainSpec:
    """Outer shape (disk of given radius, or width x height rectangle,
    both centered at the origin), cell holes, and target mesh size h.
    Lengths are in units of the cell radius r_c."""

    shape: str  # "disk" | "rectangle"
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0
    cells: tuple[Cell, ...] = ()
    h: float = 0.5

    def validate(self):
        if self.shape not in ("disk", "rectangle"):
            raise DomainError(f"unknown outer shape {self.shape!r}")
        if self.h <= 0.0:
            raise DomainError("target mesh size h must be positive")
        if self.shape == "disk":
            if self.radius <= 0.0:
                raise DomainError("disk radius must be positive")
        else:
            if self.width <= 0.0 or self.height <= 0.0:
                raise DomainError("rectangle extents must be positive")
        for i, c in enumerate(self.cells):
            if c.radius <= 0.0:
                raise DomainError(f"cell {i} radius must be positive")
            if self.h > c.radius:
                raise DomainError(
                    f"target h={self.h} exceeds radius of cell {i}; "
                    "the hole boundary would be unresolved")
            cx, cy = c.center
            if self.shape == "disk":
                if math.hypot(cx, cy) + c.radius >= self.radius:
                    raise DomainError(f"cell {i} not strictly inside the disk")
            else:
                if (abs(cx) + c.radius >= self.width / 2
                        or abs(cy) + c.radius >= self.height / 2):
                    raise DomainError(f"cell {i} not strictly inside the rectangle")
        for i in range(len(self.cells)):
            for j in range(i + 1, len(self.cells)):
                ci, cj = self.cells[i], self.cells[j]
                d = math.hypot(ci.center[0] - cj.center[0],
                               ci.center[1] - cj.center[1])
                if d <= ci.radius + cj.radius:
                    raise DomainError(f"cells {i} and {j} overlap")


@dataclass
class Mesh:
    """Conforming triangulation. Immutable after construction: the arrays
    are marked read-only so assembly workers can share a Mesh freely."""

    vertices: np.ndarray      # (nv, 2) float64
    triangles: np.ndarray     # (nt, 3) int32, counterclockwise
    vertex_tags: np.ndarray   # (nv,) int32
    domain: DomainSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        self.vertex_tags = np.ascontiguousarray(self.vertex_tags, dtype=np.int32)
        for a in (self.vertices, self.triangles, self.vertex_tags):
            a.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


@dataclass
class EdgeSet:
    """Edge topology of a conforming Mesh.

    Interior edge e has adjacent triangles (K+, K-) with K+ the smaller
    global triangle index; the stored unit normal points from K+ into K-,
    which fixes the sign of jumps deterministically.
    """

    # interior edges
    i_edges: np.ndarray     # (ni, 2) int32 vertex pairs (lo, hi)
    i_tris: np.ndarray      # (ni, 2) int32 (K+, K-)
    i_normals: np.ndarray   # (ni, 2) float64, unit, K+ -> K-
    i_lengths: np.ndarray   # (ni,) float64
    # boundary edges
    b_edges: np.ndarray     # (nb, 2) int32
    b_tris: np.ndarray      # (nb,) int32
    b_normals: np.ndarray   # (nb, 2) float64, outward
    b_lengths: np.ndarray   # (nb,) float64

    def __post_init__(self):
        for a in (self.i_edges, self.i_tris, self.i_normals, self.i_lengths,
                  self.b_edges, self.b_tris, self.b_normals, self.b_lengths):
            a.flags.writeable = False

    @property
    def n_interior(self):
        return self.i_edges.shape[0]

    @property
    def n_boundary(self):
        return self.b_edges.shape[0]


def _circle_points(center, radius, h):
    n = max(8, int(math.ceil(2.0 * math.pi * radius / h)))
    th = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th),
                            center[1] + radius * np.sin(th)])


def _rect_points(width, height, h):
    nx = max(2, int(math.ceil(width / h)))
    ny = max(2, int(math.ceil(height / h)))
    x0, x1 = -width / 2, width / 2
    y0, y1 = -height / 2, height / 2
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    bottom = np.column_stack([xs[:-1], np.full(nx, y0)])
    right = np.column_stack([np.full(ny, x1), ys[:-1]])
    top = np.column_stack([xs[::-1][:-1], np.full(nx, y1)])
    left = np.column_stack([np.full(ny, x0), ys[::-1][:-1]])
    return np.vstack([bottom, right, top, left])


def _hex_lattice(bbox, h):
    (x0, y0), (x1, y1) = bbox
    dy = h * math.sqrt(3.0) / 2.0
    rows = int(math.floor((y1 - y0) / dy)) + 1
    pts = []
    for j in range(rows + 1):
        y = y0 + j * dy
        if y > y1 + 1e-12:
            break
        off = 0.5 * h if j % 2 else 0.0
        xs = np.arange(x0 + off, x1 + 1e-12, h)
        pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    if not pts:
        return np.zeros((0, 2))
    return np.vstack(pts)


def _points_in_polygon(points, poly):
    """Crossing-number test, vectorized over points. Boundary points are
    classified arbitrarily; callers keep query points off the polygon."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    for k in range(len(poly)):
        ax, ay, bx, by = px[k], py[k], qx[k], qy[k]
        cond = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (x < xs)
    return inside


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


_SMOOTH_PASSES = 4


def _carved_delaunay(pts, holes):
    """Delaunay triangulation with hole triangles removed (centroid test
    against the chord polygons)."""
    tri = Delaunay(pts).simplices.astype(np.int32)
    cent = pts[tri].mean(axis=1)
    keep_t = np.ones(len(tri), dtype=bool)
    for hp in holes:
        keep_t &= ~_points_in_polygon(cent, hp)
    # Delaunay covers the convex hull; for the rectangle and disk the hull
    # is the outer polygon itself, so only hole triangles get dropped.
    return tri[keep_t]


def _smooth_interior(pts, tri, tags, spec, margin):
    """One Laplacian pass: move untagged vertices to the centroid of their
    mesh neighbors, clamped to keep clearance from all boundaries."""
    n = len(pts)
    sums = np.zeros((n, 2))
    cnt = np.zeros(n)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        np.add.at(sums, tri[:, a], pts[tri[:, b]])
        np.add.at(cnt, tri[:, a], 1.0)
        np.add.at(sums, tri[:, b], pts[tri[:, a]])
        np.add.at(cnt, tri[:, b], 1.0)
    movable = (tags == TAG_NONE) & (cnt > 0)
    out = pts.copy()
    out[movable] = sums[movable] / cnt[movable, None]
    if spec.shape == "disk":
        r = np.hypot(out[movable, 0], out[movable, 1])
        lim = spec.radius - margin
        scale = np.where(r > lim, lim / r, 1.0)
        out[movable] *= scale[:, None]
    else:
        out[movable, 0] = np.clip(out[movable, 0],
                                  -spec.width / 2 + margin,
                                  spec.width / 2 - margin)
        out[movable, 1] = np.clip(out[movable, 1],
                                  -spec.height / 2 + margin,
                                  spec.height / 2 - margin)
    for c in spec.cells:
        d = out[movable] - np.asarray(c.center)
        r = np.hypot(d[:, 0], d[:, 1])
        lim = c.radius + margin
        scale = np.where(r < lim, lim / np.maximum(r, 1e-12), 1.0)
        out[movable] = np.asarray(c.center) + d * scale[:, None]
    return out


def generate_mesh(spec: DomainSpec) -> Mesh:
    """Triangulate the polygonalized domain of `spec`.

    Boundary circles are polygonalized with ceil(2*pi*r/h) chords (chord
    error <= h^2/(8 r)); interior nodes come from a hexagonal lattice of
    spacing h, filtered away from boundaries, plus a tiny deterministic
    jitter. Delaunay triangulates the cloud and hole/outside triangles are
    dropped. The result is checked for conformity before returning.
    """
    spec.validate()
    h = spec.h

    if spec.shape == "disk":
        outer = _circle_points((0.0, 0.0), spec.radius, h)
        bbox = ((-spec.radius, -spec.radius), (spec.radius, spec.radius))
    else:
        outer = _rect_points(spec.width, spec.height, h)
        bbox = ((-spec.width / 2, -spec.height / 2),
                (spec.width / 2, spec.height / 2))
    holes = [_circle_points(c.center, c.radius, h) for c in spec.cells]

    lattice = _hex_lattice(bbox, h)
    keep = np.ones(len(lattice), dtype=bool)
    margin = 0.55 * h
    if spec.shape == "disk":
        keep &= np.hypot(lattice[:, 0], lattice[:, 1]) < spec.radius - margin
    else:
        keep &= (np.abs(lattice[:, 0]) < spec.width / 2 - margin)
        keep &= (np.abs(lattice[:, 1]) < spec.height / 2 - margin)
    for c in spec.cells:
        d = np.hypot(lattice[:, 0] - c.center[0], lattice[:, 1] - c.center[1])
        keep &= d > c.radius + margin
    interior = lattice[keep]
    rng = np.random.default_rng(_JITTER_SEED)
    interior = interior + rng.uniform(-_JITTER_FRAC * h, _JITTER_FRAC * h,
                                      size=interior.shape)

    pts = np.vstack([outer] + holes + [interior])
    tags = np.concatenate(
        [np.full(len(outer), TAG_OUTER, dtype=np.int32)]
        + [np.full(len(hp), TAG_CELL0 + i, dtype=np.int32)
           for i, hp in enumerate(holes)]
        + [np.zeros(len(interior), dtype=np.int32)])

    tri = _carved_delaunay(pts, holes)
    for _ in range(_SMOOTH_PASSES):
        pts = _smooth_interior(pts, tri, tags, spec, margin=0.35 * h)
        tri = _carved_delaunay(pts, holes)

    p = pts[tri]
    sa = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = sa < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    if np.any(np.abs(sa) < 1e-12 * h * h):
        raise TopologyError("degenerate triangle produced by triangulation")

    used = np.unique(tri)
    remap = -np.ones(len(pts), dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    mesh = Mesh(pts[used], remap[tri], tags[used], domain=spec)

    area = float(np.sum(mesh.signed_areas()))
    target = _polygon_area(outer) - sum(_polygon_area(hp) for hp in holes)
    if not math.isclose(area, target, rel_tol=1e-8):
        raise TopologyError(
            f"mesh area {area} does not tile the polygonal domain {target}; "
            "boundary chords were lost in triangulation")
    build_edges(mesh)  # raises TopologyError on broken incidence
    return mesh


def _edge_incidence(mesh: Mesh):
    """Unique triangle edges and their incident triangles.

    Returns (edges (ne,2) sorted pairs, tri_of (ne,2) with -1 padding,
    count (ne,)). Raises TopologyError if an edge has >2 triangles.
    """
    t = mesh.triangles
    raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    owner = np.tile(np.arange(len(t), dtype=np.int32), 3)
    edges, inv, cnt = np.unique(raw_sorted, axis=0, return_inverse=True,
                                return_counts=True)
    if cnt.max(initial=0) > 2:
        raise TopologyError("edge shared by more than two triangles")
    tri_of = -np.ones((len(edges), 2), dtype=np.int32)
    order = np.argsort(inv, kind="stable")
    pos = np.zeros(len(edges), dtype=np.int32)
    for k in order:
        e = inv[k]
        tri_of[e, pos[e]] = owner[k]
        pos[e] += 1
    return edges.astype(np.int32), tri_of, cnt


def _hanging_vertex_check(mesh, b_edges):
    """A vertex strictly inside a boundary segment means non-conformity."""
    v = mesh.vertices
    for a, b in b_edges:
        pa, pb = v[a], v[b]
        d = pb - pa
        L2 = float(d @ d)
        rel = v - pa
        t = (rel @ d) / L2
        off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.sqrt(L2)
        bad = (off < 1e-10) & (t > 1e-10) & (t < 1 - 1e-10)
        bad[a] = bad[b] = False
        if np.any(bad):
            raise TopologyError(
                f"hanging vertex {int(np.flatnonzero(bad)[0])} on boundary "
                f"edge ({a}, {b})")


def build_edges(mesh: Mesh) -> EdgeSet:
    """Classify every triangle edge as interior or boundary and attach
    adjacency, unit normals, and lengths."""
    edges, tri_of, cnt = _edge_incidence(mesh)
    v = mesh.vertices
    is_int = cnt == 2

    def outward_normal(tri_idx, a, b):
        # orientation of (a, b) as traversed in the CCW triangle gives the
        # outward side: rotate the traversal direction by -90 degrees
        tv = mesh.triangles[tri_idx]
        for k in range(3):
            if tv[k] == a and tv[(k + 1) % 3] == b:
                d = v[b] - v[a]
                break
            if tv[k] == b and tv[(k + 1) % 3] == a:
                d = v[a] - v[b]
                break
        else:
            raise TopologyError("edge not found in its incident triangle")
        n = np.array([d[1], -d[0]])
        return n / np.linalg.norm(n)

    ie = edges[is_int]
    it_pair = np.sort(tri_of[is_int], axis=1)  # K+ = smaller index
    i_normals = np.empty((len(ie), 2))
    i_lengths = np.empty(len(ie))
    for k, ((a, b), (kp, _km)) in enumerate(zip(ie, it_pair)):
        i_normals[k] = outward_normal(kp, a, b)
        i_lengths[k] = np.linalg.norm(v[b] - v[a])

    be = edges[~is_int]
    bt = tri_of[~is_int, 0]
    b_normals = np.empty((len(be), 2))
    b_lengths = np.empty(len(be))
    for k, ((a, b), kk) in enumerate(zip(be, bt)):
        b_normals[k] = outward_normal(kk, a, b)
        b_lengths[k] = np.linalg.norm(v[b] - v[a])

    _hanging_vertex_check(mesh, be)
    return EdgeSet(ie, it_pair.astype(np.int32), i_normals, i_lengths,
                   be, bt.astype(np.int32), b_normals, b_lengths)


def _project_to_circle(p, center, radius):
    d = p - center
    r = np.hypot(d[:, 0], d[:, 1])
    return center + d * (radius / r)[:, None]


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into 4 by edge midpoints. Midpoints of curved
    boundary edges are projected back onto the analytic circle, so the
    polygonal boundary keeps tracking the true geometry as h halves."""
    edges, tri_of, cnt = _edge_incidence(mesh)
    v = mesh.vertices
    nv = mesh.n_vertices
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])

    tags_a = mesh.vertex_tags[edges[:, 0]]
    tags_b = mesh.vertex_tags[edges[:, 1]]
    mid_tags = np.zeros(len(edges), dtype=np.int32)
    on_boundary = cnt == 1
    same = tags_a == tags_b
    if np.any(on_boundary & ~same):
        # a boundary edge joining two different loops cannot happen on a
        # valid generated mesh
        raise TopologyError("boundary edge with inconsistent vertex tags")
    mid_tags[on_boundary] = tags_a[on_boundary]

    dom = mesh.domain
    if dom is not None:
        sel = on_boundary & (mid_tags == TAG_OUTER)
        if dom.shape == "disk" and np.any(sel):
            mid[sel] = _project_to_circle(mid[sel], np.zeros(2), dom.radius)
        for i, c in enumerate(dom.cells):
            sel = on_boundary & (mid_tags == TAG_CELL0 + i)
            if np.any(sel):
                mid[sel] = _project_to_circle(mid[sel], np.asarray(c.center),
                                              c.radius)

    key = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}
    t = mesh.triangles
    new_tris = np.empty((4 * len(t), 3), dtype=np.int32)
    for i, (a, b, c) in enumerate(t):
        mab = key[(min(a, b), max(a, b))]
        mbc = key[(min(b, c), max(b, c))]
        mca = key[(min(c, a), max(c, a))]
        new_tris[4 * i + 0] = (a, mab, mca)
        new_tris[4 * i + 1] = (b, mbc, mab)
        new_tris[4 * i + 2] = (c, mca, mbc)
        new_tris[4 * i + 3] = (mab, mbc, mca)

    out = Mesh(np.vstack([v, mid]),
               new_tris,
               np.concatenate([mesh.vertex_tags, mid_tags]),
               domain=dom)
    if np.any(out.signed_areas() <= 0):
        raise TopologyError("refinement produced a non-positive triangle")
    return out


def shape_metrics(mesh: Mesh):
    """Per-mesh extremes of the element geometry.

    Returns (max h_K, max h_K / rho_K, min corner angle in degrees), with
    h_K the longest edge and rho_K the incircle radius.
    """
    p = mesh.vertices[mesh.triangles]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    lengths = np.stack([e0, e1, e2], axis=1)
    h_k = lengths.max(axis=1)
    area = np.abs(mesh.signed_areas())
    rho = 2.0 * area / lengths.sum(axis=1)

    def corner(a, b, c):
        u = b - a
        w = c - a
        cosang = np.einsum("ij,ij->i", u, w) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))

    ang = np.minimum.reduce([corner(p[:, 0], p[:, 1], p[:, 2]),
                             corner(p[:, 1], p[:, 2], p[:, 0]),
                             corner(p[:, 2], p[:, 0], p[:, 1])])
    return float(h_k.max()), float((h_k / rho).max()), float(ang.min())


MESH_FORMAT_HEADER = "tethermesh 1"


def write_mesh(mesh: Mesh, path):
    """Plain-text format: header, `<nv> <nt>`, nv lines `x y tag`,
    nt lines `i j k` (0-based, counterclockwise)."""
    with open(path, "w") as f:
        f.write(MESH_FORMAT_HEADER + "\n")
        f.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for (x, y), tag in zip(mesh.vertices, mesh.vertex_tags):
            f.write(f"{x:.17g} {y:.17g} {int(tag)}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def read_mesh(path) -> Mesh:
    with open(path) as f:
        header = f.readline().strip()
        if header != MESH_FORMAT_HEADER:
            raise ValueError(f"not a tethermesh file: header {header!r}")
        nv, nt = (int(s) for s in f.readline().split())
        verts = np.empty((nv, 2))
        tags = np.empty(nv, dtype=np.int32)
        for i in range(nv):
            xs, ys, ts = f.readline().split()
            verts[i] = (float(xs), float(ys))
            tags[i] = int(ts)
        tris = np.empty((nt, 3), dtype=np.int32)
        for i in range(nt):
            tris[i] = [int(s) for s in f.readline().split()]
    mesh = Mesh(verts, tris, tags, domain=None)
    if np.any(mesh.signed_areas() <= 0):
        raise TopologyError("mesh file contains a non-CCW or degenerate triangle")
    return mesh


def locate_points(mesh: Mesh, points, tol=1e-10):
    """Triangle index containing each query point (-1 if outside).

    Brute-force barycentric test, vectorized over triangles; meant for
    post-processing probes, not inner loops.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.vertices[mesh.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
           - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    out = np.full(len(pts), -1, dtype=np.int64)
    for i, q in enumerate(pts):
        l1 = ((q[0] - a[:, 0]) * (c[:, 1] - a[:, 1])
              - (c[:, 0] - a[:, 0]) * (q[1] - a[:, 1])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (q[1] - a[:, 1])
              - (q[0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
        ok = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        idx = np.flatnonzero(ok)
        if len(idx):
            out[i] = idx[0]
    return out
