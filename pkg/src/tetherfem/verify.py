"""Numerical verification battery for the quantitative estimates.

Interpolation-error and gradient-jump decay rates under uniform
refinement, discrete trace constants, a broken Poincare probe, and the
natural-boundary-condition residual of solved states. Rate reports fit a
log-log slope by least squares and pass when the slope clears the target
minus a 0.25 pre-asymptotic margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .energy import EnergyAssembler, EnergyParams
from .geometry import DomainSpec, EdgeSet, Mesh, build_edges, generate_mesh, refine_uniform
from .space import Field, Space, cell_rule, edge_rule, interpolate

SLOPE_MARGIN = 0.25


@dataclass
class RateReport:
    hs: np.ndarray
    errors: np.ndarray
    slope: float
    target: float

    def __post_init__(self):
        if len(self.hs) < 3:
            raise ValueError("rate fits require at least 3 mesh levels")
        if np.any(np.diff(self.hs) >= 0):
            raise ValueError("mesh sizes must be strictly decreasing")

    @property
    def passed(self):
        return self.slope >= self.target - SLOPE_MARGIN


def fit_slope(hs, errors) -> float:
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def _unit_square_levels(levels: int, h0: float = 0.25):
    mesh = generate_mesh(DomainSpec(shape="rectangle", width=1.0, height=1.0,
                                    h=h0))
    out = [mesh]
    for _ in range(levels - 1):
        out.append(refine_uniform(out[-1]))
    return out


def _interp_errors(mesh: Mesh, q: int, u, grad_u, hess_u):
    """(L2, H1-seminorm, broken-H2-seminorm) errors of u - I_h u."""
    space = Space(mesh, q)
    uh = interpolate(space, u)
    rule = cell_rule(2 * q + 4)
    ref_pts = rule.points[:, 1:3]
    N = space.ref.eval(ref_pts)
    dN = space.ref.grad(ref_pts)
    d2N = space.ref.hess(ref_pts)
    Binv = space.tri_Binv
    w = np.abs(space.tri_detB)[:, None] * rule.weights[None, :]
    c = uh.coeffs.reshape(-1, 2)[space.cell_dofs]          # (nt, nloc, 2)

    origin = space.tri_origin
    B = space.tri_B
    pts = origin[:, None, :] + np.einsum("qa,tda->tqd", ref_pts, B)
    flat = pts.reshape(-1, 2)

    vals_h = np.einsum("ql,tlk->tqk", N, c)
    diff = vals_h - np.asarray(u(flat)).reshape(pts.shape[0], pts.shape[1], 2)
    err_l2 = np.einsum("tq,tqk,tqk->", w, diff, diff)

    dNx = np.einsum("qla,tad->tqld", dN, Binv)
    grads_h = np.einsum("tqld,tlk->tqkd", dNx, c)
    gdiff = grads_h - np.asarray(grad_u(flat)).reshape(
        pts.shape[0], pts.shape[1], 2, 2)
    err_h1 = np.einsum("tq,tqkd,tqkd->", w, gdiff, gdiff)

    d2Nx = np.einsum("tai,qlab,tbj->tqlij", Binv, d2N, Binv)
    hess_h = np.einsum("tqlij,tlk->tqkij", d2Nx, c)
    hdiff = hess_h - np.asarray(hess_u(flat)).reshape(
        pts.shape[0], pts.shape[1], 2, 2, 2)
    err_h2 = np.einsum("tq,tqkij,tqkij->", w, hdiff, hdiff)
    return np.sqrt([err_l2, err_h1, err_h2])


def default_smooth_solution():
    """A convenient non-polynomial displacement with analytic derivatives."""

    def u(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([np.sin(x) * np.sin(y), np.cos(x)])

    def grad_u(p):
        x, y = p[:, 0], p[:, 1]
        g = np.empty((len(p), 2, 2))
        g[:, 0, 0] = np.cos(x) * np.sin(y)
        g[:, 0, 1] = np.sin(x) * np.cos(y)
        g[:, 1, 0] = -np.sin(x)
        g[:, 1, 1] = 0.0
        return g

    def hess_u(p):
        x, y = p[:, 0], p[:, 1]
        h = np.empty((len(p), 2, 2, 2))
        h[:, 0, 0, 0] = -np.sin(x) * np.sin(y)
        h[:, 0, 0, 1] = np.cos(x) * np.cos(y)
        h[:, 0, 1, 0] = np.cos(x) * np.cos(y)
        h[:, 0, 1, 1] = -np.sin(x) * np.sin(y)
        h[:, 1, 0, 0] = -np.cos(x)
        h[:, 1, 0, 1] = h[:, 1, 1, 0] = h[:, 1, 1, 1] = 0.0
        return h

    return u, grad_u, hess_u


def interp_rate_study(u, grad_u, hess_u, levels: int = 4, q: int = 2,
                      h0: float = 0.25):
    """RateReports for the L2, H1, and broken-H2 interpolation errors of a
    smooth displacement over uniformly refined unit-square meshes; targets
    q+1, q, q-1 (s = q+1 regularity)."""
    meshes = _unit_square_levels(levels, h0)
    hs = []
    errs = []
    for mesh in meshes:
        from .geometry import shape_metrics
        hs.append(shape_metrics(mesh)[0])
        errs.append(_interp_errors(mesh, q, u, grad_u, hess_u))
    errs = np.array(errs)
    hs = np.array(hs)
    s = q + 1
    return tuple(RateReport(hs, errs[:, m], fit_slope(hs, errs[:, m]),
                            float(s - m)) for m in range(3))


def jump_decay_study(u, levels: int = 4, q: int = 2, h0: float = 0.25):
    """Decay of the scaled gradient-jump sum of the interpolant,
    sum_e h_e^{-1} int |[grad I_h u]|^2, target slope 2 (s = 3)."""
    meshes = _unit_square_levels(levels, h0)
    hs, sums = [], []
    for mesh in meshes:
        from .geometry import shape_metrics
        space = Space(mesh, q)
        edges = build_edges(mesh)
        asm = EnergyAssembler(space, edges, EnergyParams())
        uh = interpolate(space, u)
        hs.append(shape_metrics(mesh)[0])
        sums.append(asm.jump_seminorm_sq(uh))
    hs = np.array(hs)
    sums = np.array(sums)
    return RateReport(hs, sums, fit_slope(hs, sums), 2.0)


def consistency_decay_study(u, levels: int = 4, q: int = 2, h0: float = 0.25):
    """Decay of |sum_e int {hess I_h u} . [grad I_h u x n]|, target slope
    1 (s = 3)."""
    meshes = _unit_square_levels(levels, h0)
    hs, sums = [], []
    for mesh in meshes:
        from .geometry import shape_metrics
        space = Space(mesh, q)
        edges = build_edges(mesh)
        asm = EnergyAssembler(space, edges, EnergyParams())
        uh = interpolate(space, u)
        hs.append(shape_metrics(mesh)[0])
        sums.append(abs(asm.consistency_raw(uh)))
    hs = np.array(hs)
    sums = np.array(sums)
    return RateReport(hs, sums, fit_slope(hs, sums), 1.0)


def trace_constant_probe(space: Space) -> float:
    """Sharp discrete trace constant: max over elements and their edges of
    h_e ||p||^2_{L2(e)} / ||p||^2_{L2(K)} over p in P_q(K).

    Affine equivalence reduces this to three reference generalized
    eigenproblems scaled per element by h_e^2 / (2 area)."""
    q = space.degree
    ref = space.ref
    rule = cell_rule(2 * q)
    vals = ref.eval(rule.points[:, 1:3])
    M = np.einsum("q,qi,qj->ij", rule.weights, vals, vals)
    erule = edge_rule(2 * q)
    t = erule.points
    vref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    lam_loc = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        pts = vref[a] + np.outer(t, vref[b] - vref[a])
        ev = ref.eval(pts)
        E = np.einsum("q,qi,qj->ij", erule.weights, ev, ev)
        lam_loc.append(scipy.linalg.eigh(E, M, eigvals_only=True)[-1])
    lam_loc = np.array(lam_loc)

    mesh = space.mesh
    p = mesh.vertices[mesh.triangles]
    area2 = np.abs(space.tri_detB)
    best = 0.0
    for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        he = np.linalg.norm(p[:, b] - p[:, a], axis=1)
        best = max(best, float(np.max(he ** 2 / area2 * lam_loc[k])))
    return best


def random_smooth_fields(space: Space, n_samples: int, seed: int = 0):
    """Interpolants of random low-frequency trig displacements; the sample
    distribution is mesh-independent, so probe ratios are comparable
    across refinement levels."""
    rng = np.random.default_rng(seed)
    modes = [(kx, ky) for kx in range(3) for ky in range(3)]
    for _ in range(n_samples):
        cs = rng.standard_normal((len(modes), 2, 4))

        def g(p, cs=cs):
            x, y = p[:, 0], p[:, 1]
            out = np.zeros((len(p), 2))
            for (kx, ky), c in zip(modes, cs):
                sx, cx = np.sin(kx * x), np.cos(kx * x)
                sy, cy = np.sin(ky * y), np.cos(ky * y)
                for k in range(2):
                    out[:, k] += (c[k, 0] * sx * sy + c[k, 1] * sx * cy
                                  + c[k, 2] * cx * sy + c[k, 3] * cx * cy)
            return out

        yield interpolate(space, g)


def poincare_probe(space: Space, edges: EdgeSet, n_samples: int = 100,
                   r: int = 2, seed: int = 0) -> float:
    """Max sampled ratio ||grad w||^2_{L^r} over
    (|w|^2_{H2(T_h)} + |mean grad w|^2) for random smooth sample fields."""
    if r not in (2, 4):
        raise ValueError("probe supports r in {2, 4}")
    asm = EnergyAssembler(space, edges, EnergyParams())
    rule = cell_rule(max(2, r * (space.degree - 1)))
    ref_pts = rule.points[:, 1:3]
    dN = space.ref.grad(ref_pts)
    dNx = np.einsum("qla,tad->tqld", dN, space.tri_Binv)
    w = np.abs(space.tri_detB)[:, None] * rule.weights[None, :]
    omega = float(np.sum(np.abs(space.tri_detB)) / 2.0)
    worst = 0.0
    for u in random_smooth_fields(space, n_samples, seed):
        coeffs = u.coeffs
        c = coeffs.reshape(-1, 2)[space.cell_dofs]
        G = np.einsum("tqld,tlk->tqkd", dNx, c)
        gnorm2 = np.einsum("tqkd,tqkd->tq", G, G)
        lhs = float(np.sum(w * gnorm2 ** (r / 2))) ** (2.0 / r)
        mean_g = np.einsum("tq,tqkd->kd", w, G) / omega
        semi2 = 2.0 * asm._cell_call(coeffs, False)[2] \
            + asm.jump_seminorm_sq(coeffs)
        rhs = semi2 + float(np.sum(mean_g ** 2))
        worst = max(worst, lhs / rhs)
    return worst


def natural_bc_residual(u: Field, edges: EdgeSet) -> float:
    """Boundary integral of sum_k |hess(u_k) : n x n| from the piecewise
    Hessians of the boundary elements; a diagnostic expected to shrink
    under refinement for solved states, not asserted to vanish."""
    space = u.space
    erule = edge_rule(2 * space.degree)
    t = erule.points
    verts = space.mesh.vertices
    c_all = u.coeffs.reshape(-1, 2)
    total = 0.0
    for e in range(edges.n_boundary):
        a, b = edges.b_edges[e]
        tri = int(edges.b_tris[e])
        n = edges.b_normals[e]
        pts = verts[a] + np.outer(t, verts[b] - verts[a])
        ref = space.to_reference(tri, pts)
        Binv = space.tri_Binv[tri]
        d2N = np.einsum("ai,qlab,bj->qlij", Binv, space.ref.hess(ref), Binv)
        c = c_all[space.cell_dofs[tri]]
        H = np.einsum("qlij,lk->qkij", d2N, c)
        hnn = np.einsum("qkij,i,j->qk", H, n, n)
        total += edges.b_lengths[e] * float(
            np.sum(erule.weights[:, None] * np.abs(hnn)))
    return total
