"""Continuous Lagrange spaces and broken companions.

Degree-q (q >= 2) continuous vector Lagrange spaces over a Mesh: global
DOF maps with shared interface nodes, nodal interpolation, exact
evaluation of values / gradients / piecewise Hessians, quadrature rules,
and the node-averaging reconstruction operator turning a broken field
into a continuous one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .geometry import Mesh, TAG_NONE, _edge_incidence

MAX_QUAD_DEGREE = 20


@dataclass(frozen=True)
class Quadrature:
    """Cell rule (barycentric points over the reference triangle, weights
    summing to 1/2) or edge rule (points in [0,1], weights summing to 1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def cell_rule(exactness_degree: int) -> Quadrature:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule on the reference
    triangle, exact for total degree <= exactness_degree."""
    if exactness_degree > MAX_QUAD_DEGREE:
        raise ValueError(f"cell rule degree {exactness_degree} unsupported")
    d = max(exactness_degree, 1)
    n = (d + 2) // 2
    tj, wj = roots_jacobi(n, 1.0, 0.0)   # weight (1-t) on [-1, 1]
    tg, wg = leggauss(n)
    xi = (tj + 1.0) / 2.0                # x coordinate, Jacobi direction
    eta = (tg + 1.0) / 2.0
    X = np.repeat(xi, n)
    Y = np.tile(eta, n) * (1.0 - X)
    W = np.repeat(wj / 4.0, n) * np.tile(wg / 2.0, n)
    bary = np.column_stack([1.0 - X - Y, X, Y])
    return Quadrature(bary, W, exactness_degree)


def edge_rule(exactness_degree: int) -> Quadrature:
    if exactness_degree > MAX_QUAD_DEGREE:
        raise ValueError(f"edge rule degree {exactness_degree} unsupported")
    n = max(1, (exactness_degree + 2) // 2)
    t, w = leggauss(n)
    return Quadrature((t + 1.0) / 2.0, w / 2.0, exactness_degree)


# ---------------------------------------------------------------------------
# reference Lagrange basis on the unit triangle (0,0)-(1,0)-(0,1)

def lagrange_nodes(q: int) -> np.ndarray:
    """Equispaced nodes: 3 vertices, then q-1 nodes per edge (edge 0:
    v0->v1, edge 1: v1->v2, edge 2: v2->v0, ordered along the edge), then
    interior nodes in lexicographic order."""
    if q < 1:
        raise ValueError("degree must be >= 1")
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v[0], v[1], v[2]]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for k in range(1, q):
            nodes.append(v[a] + (v[b] - v[a]) * (k / q))
    for i in range(1, q):
        for j in range(1, q - i):
            nodes.append(np.array([i / q, j / q]))
    return np.array(nodes)


def _monomial_exponents(q):
    return [(a, b) for a in range(q + 1) for b in range(q + 1 - a)]


class ReferenceBasis:
    """Nodal Lagrange basis of degree q via monomial Vandermonde inverse.

    Degree 0 is the single constant function at the barycenter (used by
    broken companion spaces)."""

    def __init__(self, q: int):
        self.q = q
        if q == 0:
            self.nodes = np.array([[1 / 3, 1 / 3]])
            self.n_functions = 1
            return
        self.nodes = lagrange_nodes(q)
        self.n_functions = len(self.nodes)
        exps = _monomial_exponents(q)
        V = np.empty((self.n_functions, len(exps)))
        for m, (a, b) in enumerate(exps):
            V[:, m] = self.nodes[:, 0] ** a * self.nodes[:, 1] ** b
        self._coef = np.linalg.inv(V)     # (n_mono, n_func)
        self._exps = exps

    def eval(self, pts):
        """Basis values at reference points, shape (npts, nfunc)."""
        pts = np.atleast_2d(pts)
        if self.q == 0:
            return np.ones((len(pts), 1))
        M = np.empty((len(pts), len(self._exps)))
        for m, (a, b) in enumerate(self._exps):
            M[:, m] = pts[:, 0] ** a * pts[:, 1] ** b
        return M @ self._coef

    def grad(self, pts):
        """Basis gradients, shape (npts, nfunc, 2)."""
        pts = np.atleast_2d(pts)
        if self.q == 0:
            return np.zeros((len(pts), 1, 2))
        out = np.zeros((len(pts), self.n_functions, 2))
        Mx = np.zeros((len(pts), len(self._exps)))
        My = np.zeros((len(pts), len(self._exps)))
        for m, (a, b) in enumerate(self._exps):
            if a:
                Mx[:, m] = a * pts[:, 0] ** (a - 1) * pts[:, 1] ** b
            if b:
                My[:, m] = b * pts[:, 0] ** a * pts[:, 1] ** (b - 1)
        out[:, :, 0] = Mx @ self._coef
        out[:, :, 1] = My @ self._coef
        return out

    def hess(self, pts):
        """Basis Hessians, shape (npts, nfunc, 2, 2)."""
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), self.n_functions, 2, 2))
        if self.q == 0:
            return out
        Mxx = np.zeros((len(pts), len(self._exps)))
        Mxy = np.zeros((len(pts), len(self._exps)))
        Myy = np.zeros((len(pts), len(self._exps)))
        for m, (a, b) in enumerate(self._exps):
            if a >= 2:
                Mxx[:, m] = a * (a - 1) * pts[:, 0] ** (a - 2) * pts[:, 1] ** b
            if a >= 1 and b >= 1:
                Mxy[:, m] = a * b * pts[:, 0] ** (a - 1) * pts[:, 1] ** (b - 1)
            if b >= 2:
                Myy[:, m] = b * (b - 1) * pts[:, 0] ** a * pts[:, 1] ** (b - 2)
        out[:, :, 0, 0] = Mxx @ self._coef
        out[:, :, 1, 1] = Myy @ self._coef
        out[:, :, 0, 1] = out[:, :, 1, 0] = Mxy @ self._coef
        return out


# ---------------------------------------------------------------------------

class Space:
    """Degree-q continuous Lagrange space over a Mesh.

    Scalar DOF layout: vertex nodes first (one per mesh vertex), then
    q-1 nodes per unique mesh edge (ordered from the smaller to the larger
    endpoint index, so both adjacent elements agree), then per-triangle
    interior nodes. A vector Field carries two interleaved components per
    node. Immutable after construction.
    """

    def __init__(self, mesh: Mesh, degree: int = 2):
        if degree < 2:
            raise ValueError("space degree must be >= 2")
        self.mesh = mesh
        self.degree = degree
        self.ref = ReferenceBasis(degree)
        q = degree

        edges, tri_of, cnt = _edge_incidence(mesh)
        self._edges = edges
        edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}

        nv = mesh.n_vertices
        ne = len(edges)
        nt = mesh.n_triangles
        n_edge_nodes = q - 1
        n_int = (q - 1) * (q - 2) // 2
        self.n_nodes = nv + ne * n_edge_nodes + nt * n_int

        n_loc = self.ref.n_functions
        cell_dofs = np.empty((nt, n_loc), dtype=np.int32)
        tris = mesh.triangles
        for t in range(nt):
            a, b, c = (int(x) for x in tris[t])
            cell_dofs[t, 0:3] = (a, b, c)
            pos = 3
            for va, vb in ((a, b), (b, c), (c, a)):
                lo, hi = (va, vb) if va < vb else (vb, va)
                e = edge_index[(lo, hi)]
                base = nv + e * n_edge_nodes
                sl = range(n_edge_nodes) if va < vb else range(n_edge_nodes - 1, -1, -1)
                for s in sl:
                    cell_dofs[t, pos] = base + s
                    pos += 1
            for s in range(n_int):
                cell_dofs[t, pos] = nv + ne * n_edge_nodes + t * n_int + s
                pos += 1
        self.cell_dofs = cell_dofs

        # physical node coordinates via the affine map of any owning element
        coords = np.empty((self.n_nodes, 2))
        ref_nodes = self.ref.nodes
        p = mesh.vertices[tris]
        for t in range(nt):
            a = p[t, 0]
            B = np.column_stack([p[t, 1] - a, p[t, 2] - a])
            coords[cell_dofs[t]] = a + ref_nodes @ B.T
        self.node_coords = coords

        # node tags: vertex nodes inherit mesh tags; edge nodes sit on the
        # boundary polyline iff their edge is a boundary edge
        tags = np.zeros(self.n_nodes, dtype=np.int32)
        tags[:nv] = mesh.vertex_tags
        boundary_edge = cnt == 1
        for e in np.flatnonzero(boundary_edge):
            ta = mesh.vertex_tags[edges[e, 0]]
            tb = mesh.vertex_tags[edges[e, 1]]
            tag = ta if ta == tb else TAG_NONE
            if tag == TAG_NONE:
                raise ValueError("untagged boundary node on a boundary edge")
            tags[nv + e * n_edge_nodes: nv + (e + 1) * n_edge_nodes] = tag
        self.node_tags = tags

        # affine map data reused by evaluation and assembly
        a0 = p[:, 0]
        B = np.stack([p[:, 1] - a0, p[:, 2] - a0], axis=2)  # columns
        self.tri_origin = a0
        self.tri_B = B
        self.tri_detB = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        self.tri_Binv = np.empty_like(B)
        self.tri_Binv[:, 0, 0] = B[:, 1, 1] / self.tri_detB
        self.tri_Binv[:, 0, 1] = -B[:, 0, 1] / self.tri_detB
        self.tri_Binv[:, 1, 0] = -B[:, 1, 0] / self.tri_detB
        self.tri_Binv[:, 1, 1] = B[:, 0, 0] / self.tri_detB
        for arr in (cell_dofs, coords, tags, self.tri_origin, self.tri_B,
                    self.tri_detB, self.tri_Binv):
            arr.flags.writeable = False

    @property
    def n_dofs(self):
        """Scalar coefficient count of a 2-component Field."""
        return 2 * self.n_nodes

    @property
    def n_local(self):
        return self.ref.n_functions

    def boundary_nodes(self):
        return np.flatnonzero(self.node_tags != TAG_NONE)

    def to_reference(self, K: int, points):
        pts = np.atleast_2d(points)
        return (pts - self.tri_origin[K]) @ self.tri_Binv[K].T


@dataclass
class Field:
    """Coefficients of a 2-component displacement over a Space, interleaved
    (u_x, u_y) per node."""

    space: Space
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError("coefficient vector length does not match space")

    def node_values(self):
        return self.coeffs.reshape(-1, 2)

    def copy(self):
        return Field(self.space, self.coeffs.copy())


def zero_field(space: Space) -> Field:
    return Field(space, np.zeros(space.n_dofs))


@dataclass
class BrokenField:
    """Per-triangle nodal Lagrange coefficients of degree k with m
    components and no inter-element continuity. Local node ordering
    matches ReferenceBasis(k)."""

    mesh: Mesh
    degree: int
    values: np.ndarray  # (nt, n_loc, m)

    @property
    def n_components(self):
        return self.values.shape[2]


def interpolate(space: Space, g) -> Field:
    """Nodal interpolant of g.

    g maps an (n, 2) array of points to (n, 2) displacement values; a
    per-point callable returning a length-2 sequence also works.
    """
    pts = space.node_coords
    try:
        vals = np.asarray(g(pts), dtype=float)
        if vals.shape != (len(pts), 2):
            raise ValueError
    except (ValueError, TypeError):
        vals = np.array([g(p) for p in pts], dtype=float)
    if vals.shape != (len(pts), 2):
        raise ValueError("interpolated function must produce 2 components per node")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite value at an interpolation node")
    return Field(space, vals.reshape(-1))


def _check_inside(lam, tol=1e-9):
    if np.any(lam < -tol) or np.any(lam.sum(axis=1) > 1 + tol):
        raise ValueError("evaluation point outside the element")


def eval_field(field: Field, K: int, points):
    """Values of u_h at physical points inside triangle K, shape (n, 2)."""
    sp = field.space
    ref = sp.to_reference(K, points)
    _check_inside(ref)
    N = sp.ref.eval(ref)                       # (n, nloc)
    c = field.coeffs.reshape(-1, 2)[sp.cell_dofs[K]]   # (nloc, 2)
    return N @ c


def eval_grad(field: Field, K: int, points):
    """Gradients (du_k/dx_i) at physical points, shape (n, 2, 2)."""
    sp = field.space
    ref = sp.to_reference(K, points)
    _check_inside(ref)
    dN = sp.ref.grad(ref)                      # (n, nloc, 2) reference
    dNx = dN @ sp.tri_Binv[K]                  # chain rule: Binv^T from right
    c = field.coeffs.reshape(-1, 2)[sp.cell_dofs[K]]
    return np.einsum("nld,lk->nkd", dNx, c)


def eval_hess(field: Field, K: int, points):
    """Piecewise Hessians (d2 u_k / dx_i dx_j), shape (n, 2, 2, 2)."""
    sp = field.space
    ref = sp.to_reference(K, points)
    _check_inside(ref)
    H = sp.ref.hess(ref)                       # (n, nloc, 2, 2)
    Binv = sp.tri_Binv[K]
    Hx = np.einsum("ai,nlab,bj->nlij", Binv, H, Binv)
    c = field.coeffs.reshape(-1, 2)[sp.cell_dofs[K]]
    return np.einsum("nlij,lk->nkij", Hx, c)


def reconstruct(space: Space, broken: BrokenField) -> Field:
    """Node-averaging reconstruction: the continuous coefficient at each
    shared Lagrange node is the arithmetic mean of the adjacent element
    values there. The identity on already-continuous data."""
    if broken.degree != space.degree:
        raise ValueError("broken field degree does not match the space")
    if broken.n_components != 2:
        raise ValueError("reconstruction expects a 2-component broken field")
    sums = np.zeros((space.n_nodes, 2))
    counts = np.zeros(space.n_nodes)
    np.add.at(sums, space.cell_dofs, broken.values)
    np.add.at(counts, space.cell_dofs, 1.0)
    return Field(space, (sums / counts[:, None]).reshape(-1))


def to_broken(field: Field) -> BrokenField:
    """Per-element view of a continuous field in the broken nodal basis."""
    sp = field.space
    vals = field.coeffs.reshape(-1, 2)[sp.cell_dofs]
    return BrokenField(sp.mesh, sp.degree, np.ascontiguousarray(vals))
