"""Discrete energy assembly and its algebraic companions.

Assembles the interior-penalty energy

    Psi_h[u] = int W(grad u) + Phi(grad u)
             + eps^2 ( 1/2 sum_K int |hess u|^2
                       - sum_e int {hess u} . [grad u x n_e]
                       + sum_e (alpha/h_e) int |[grad u]|^2 )

together with its exact first variation, the per-edge lifting operator and
its global sum, the discrete gradient, the broken H2 seminorm, and a power
iteration estimator for the lifting-bound constant C_R.

Edge sums run over interior edges only; boundary edges carry no
higher-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from .geometry import EdgeSet, TopologyError
from .material import MaterialModel
from .space import BrokenField, Field, ReferenceBasis, Space, cell_rule, edge_rule


@dataclass(frozen=True)
class EnergyParams:
    """Higher-gradient length eps, interior-penalty weight alpha, material
    selection, and quadrature degrees (cell default max(6, 2q), edge
    default 2q)."""

    epsilon: float = 5e-3
    alpha: float = 10.0
    material: MaterialModel = field(default_factory=MaterialModel)
    cell_degree: int | None = None
    edge_degree: int | None = None


@dataclass(frozen=True)
class EnergyBreakdown:
    """Term-by-term energy; total = bulk_w + bulk_phi
    + epsilon^2 * (hess_term + consistency_term + penalty_term)."""

    bulk_w: float
    bulk_phi: float
    hess_term: float
    consistency_term: float
    penalty_term: float
    epsilon: float
    n_overflow: int = 0

    @property
    def higher_order(self):
        return self.hess_term + self.consistency_term + self.penalty_term

    @property
    def total(self):
        return (self.bulk_w + self.bulk_phi
                + self.epsilon ** 2 * self.higher_order)


def _coeffs_of(u):
    if isinstance(u, Field):
        return u.coeffs
    return np.asarray(u, dtype=np.float64)


class EnergyAssembler:
    """Precomputes per-element and per-edge basis tables for a (space,
    edge set, params) triple; all evaluation methods are pure given the
    coefficient vector. Safe for concurrent reads after construction."""

    def __init__(self, space: Space, edges: EdgeSet, params: EnergyParams):
        self.space = space
        self.edges = edges
        self.params = params
        q = space.degree
        cell_deg = params.cell_degree if params.cell_degree else max(6, 2 * q)
        edge_deg = params.edge_degree if params.edge_degree else 2 * q
        self.cell_quad = cell_rule(cell_deg)
        self.edge_quad = edge_rule(edge_deg)
        self._pen_code = K.pen_code(params.material.penalty)
        self._build_cell_tables()
        self._build_edge_tables()
        self._build_broken_tables()
        self.alpha_stability: dict | None = None

    # ---------------------------------------------------------------- tables

    def _build_cell_tables(self):
        spc = self.space
        bary = self.cell_quad.points
        ref_pts = bary[:, 1:3]
        w = self.cell_quad.weights
        N = spc.ref.eval(ref_pts)
        dN = spc.ref.grad(ref_pts)          # (nq, nloc, 2)
        d2N = spc.ref.hess(ref_pts)         # (nq, nloc, 2, 2)
        Binv = spc.tri_Binv                  # (nt, 2, 2)
        absdet = np.abs(spc.tri_detB)
        self.cw = np.ascontiguousarray(absdet[:, None] * w[None, :])
        self.cgrad = np.ascontiguousarray(
            np.einsum("qla,tad->tqld", dN, Binv))
        self.chess = np.ascontiguousarray(
            np.einsum("tai,qlab,tbj->tqlij", Binv, d2N, Binv))
        self.cN = N
        self.dofs = spc.cell_dofs

    def _edge_side_tables(self, pts_phys, tri_idx, ref_b=None):
        """Physical basis gradient/Hessian (and optionally broken basis
        values) tables of one element at given physical points."""
        spc = self.space
        ref = (pts_phys - spc.tri_origin[tri_idx]) @ spc.tri_Binv[tri_idx].T
        dN = spc.ref.grad(ref) @ spc.tri_Binv[tri_idx]
        Binv = spc.tri_Binv[tri_idx]
        d2N = np.einsum("ai,qlab,bj->qlij", Binv, spc.ref.hess(ref), Binv)
        lift = ref_b.eval(ref) if ref_b is not None else None
        return dN, d2N, lift

    def _build_edge_tables(self):
        spc = self.space
        ed = self.edges
        ni = ed.n_interior
        nq = len(self.edge_quad.points)
        nloc = spc.n_local
        q = spc.degree
        self._ref_b = ReferenceBasis(q - 2)
        nlk = self._ref_b.n_functions

        self.ew = np.ascontiguousarray(
            ed.i_lengths[:, None] * self.edge_quad.weights[None, :])
        self.edofs = np.empty((ni, 2, nloc), dtype=np.int32)
        self.egrad = np.empty((ni, 2, nq, nloc, 2))
        self.ehess = np.empty((ni, 2, nq, nloc, 2, 2))
        self.elift = np.empty((ni, 2, nq, nlk))

        verts = spc.mesh.vertices
        t = self.edge_quad.points
        for e in range(ni):
            a, b = ed.i_edges[e]
            pts = verts[a] + np.outer(t, verts[b] - verts[a])
            for s in range(2):
                tri = int(ed.i_tris[e, s])
                self.edofs[e, s] = spc.cell_dofs[tri]
                dN, d2N, lift = self._edge_side_tables(pts, tri, self._ref_b)
                self.egrad[e, s] = dN
                self.ehess[e, s] = d2N
                self.elift[e, s] = lift

    def _build_broken_tables(self):
        spc = self.space
        ref_b = self._ref_b
        nlk = ref_b.n_functions
        rule = cell_rule(max(1, 2 * ref_b.q))
        vals = ref_b.eval(rule.points[:, 1:3])
        self.Mref_b = np.einsum("q,qi,qj->ij", rule.weights, vals, vals)
        Mref_inv = np.linalg.inv(self.Mref_b)
        absdet = np.abs(spc.tri_detB)
        self.area2 = absdet                       # 2 * element area
        self.inv_mass_b = np.ascontiguousarray(
            Mref_inv[None, :, :] / absdet[:, None, None])
        # continuous-basis Hessians at the broken nodes, for the nodal
        # representation of the piecewise Hessian
        Binv = spc.tri_Binv
        d2N = spc.ref.hess(ref_b.nodes)           # (nlk, nloc, 2, 2)
        self.hess_b = np.einsum("tai,mlab,tbj->tmlij", Binv, d2N, Binv)
        self.nlk = nlk

    # ------------------------------------------------------------ energetics

    def _cell_call(self, coeffs, want_grad):
        m = self.params.material
        return K.cell_energy_grad(coeffs, self.dofs, self.cw, self.cgrad,
                                  self.chess, self._pen_code, m.pen_a,
                                  m.pen_b, m.pen_c0, m.pen_m0, want_grad)

    def _edge_call(self, coeffs, alpha, want_grad):
        if self.edges.n_interior == 0:
            return 0.0, 0.0, np.zeros(coeffs.size)
        return K.edge_energy_grad(coeffs, self.edofs, self.ew, self.egrad,
                                  self.ehess, self.edges.i_normals,
                                  self.edges.i_lengths, alpha, want_grad)

    def energy(self, u) -> EnergyBreakdown:
        bd, _ = self._energy_impl(u, want_grad=False)
        return bd

    def gradient(self, u) -> np.ndarray:
        _, g = self._energy_impl(u, want_grad=True)
        return g

    def energy_and_gradient(self, u):
        return self._energy_impl(u, want_grad=True)

    def _energy_impl(self, u, want_grad):
        coeffs = _coeffs_of(u)
        if coeffs.size != self.space.n_dofs:
            raise ValueError("coefficient vector does not match the space")
        p = self.params
        w_sum, phi_sum, hess_sum, n_clamped, gb, gh = \
            self._cell_call(coeffs, want_grad)
        cons_raw, pen_sum, ge = self._edge_call(coeffs, p.alpha, want_grad)
        bd = EnergyBreakdown(bulk_w=w_sum, bulk_phi=phi_sum,
                             hess_term=hess_sum,
                             consistency_term=-cons_raw,
                             penalty_term=pen_sum,
                             epsilon=p.epsilon, n_overflow=n_clamped)
        grad = None
        if want_grad:
            grad = gb + p.epsilon ** 2 * (gh + ge)
        return bd, grad

    def psi_ho(self, u) -> float:
        """Higher-order part straight from the assembled terms."""
        bd = self.energy(u)
        return bd.higher_order

    # ------------------------------------------------- lifting and friends

    def lifting(self, u) -> BrokenField:
        """Global lifting R_h(grad u) in the degree q-2 broken space,
        8 components flattened as 4k + 2i + j."""
        coeffs = _coeffs_of(u)
        if self.edges.n_interior == 0:
            raise TopologyError("lifting requires at least one interior edge")
        vals = K.lifting_accumulate(coeffs, self.edofs, self.ew, self.egrad,
                                    self.elift, self.edges.i_normals,
                                    self.edges.i_tris, self.inv_mass_b,
                                    self.space.mesh.n_triangles, self.nlk)
        return BrokenField(self.space.mesh, self.space.degree - 2, vals)

    def hessian_broken(self, u) -> BrokenField:
        """Elementwise Hessian of u in the broken nodal basis (exact,
        since hess u restricted to K lies in P_{q-2})."""
        coeffs = _coeffs_of(u)
        c = coeffs.reshape(-1, 2)[self.dofs]          # (nt, nloc, 2)
        H = np.einsum("tlk,tmlij->tmkij", c, self.hess_b)
        nt = self.space.mesh.n_triangles
        return BrokenField(self.space.mesh, self.space.degree - 2,
                           H.reshape(nt, self.nlk, 8))

    def discrete_gradient(self, u) -> BrokenField:
        """G_h(grad u) = piecewise Hessian minus global lifting."""
        hess = self.hessian_broken(u)
        lift = self.lifting(u)
        return BrokenField(self.space.mesh, self.space.degree - 2,
                           hess.values - lift.values)

    def broken_l2(self, a: BrokenField, b: BrokenField | None = None) -> float:
        """L2 inner product of broken fields (of the lifting degree)."""
        bv = a.values if b is None else b.values
        return float(np.einsum("t,ij,tic,tjc->", self.area2, self.Mref_b,
                               a.values, bv))

    def psi_ho_via_discrete_gradient(self, u) -> float:
        """Higher-order energy in the equivalent discrete-gradient form
        1/2 int |G_h|^2 - 1/2 int |R_h|^2 + jump penalty."""
        g = self.discrete_gradient(u)
        r = self.lifting(u)
        coeffs = _coeffs_of(u)
        _, pen_sum, _ = self._edge_call(coeffs, self.params.alpha, False)
        return 0.5 * self.broken_l2(g) - 0.5 * self.broken_l2(r) + pen_sum

    def jump_seminorm_sq(self, u) -> float:
        """sum_e (1/h_e) int |[grad u]|^2."""
        _, pen, _ = self._edge_call(_coeffs_of(u), 1.0, False)
        return pen

    def consistency_raw(self, u) -> float:
        """sum_e int {hess u} . [grad u x n_e] (unsigned form)."""
        cons, _, _ = self._edge_call(_coeffs_of(u), 1.0, False)
        return cons

    def broken_h2_seminorm(self, u) -> float:
        coeffs = _coeffs_of(u)
        _, _, hess_sum, _, _, _ = self._cell_call(coeffs, False)
        return float(np.sqrt(2.0 * hess_sum + self.jump_seminorm_sq(coeffs)))

    def lifting_single_edge(self, u, e: int) -> BrokenField:
        """r_e(grad u): the lifting of one interior edge, supported on its
        two adjacent elements."""
        coeffs = _coeffs_of(u)
        cv = coeffs.reshape(-1, 2)
        jump = (np.einsum("lk,qli->qki", cv[self.edofs[e, 0]], self.egrad[e, 0])
                - np.einsum("lk,qli->qki", cv[self.edofs[e, 1]], self.egrad[e, 1]))
        n = self.edges.i_normals[e]
        jn = np.einsum("qki,j->qkij", jump, n).reshape(len(jump), 8)
        nt = self.space.mesh.n_triangles
        vals = np.zeros((nt, self.nlk, 8))
        for s in range(2):
            K = int(self.edges.i_tris[e, s])
            b = 0.5 * np.einsum("q,qm,qc->mc", self.ew[e], self.elift[e, s], jn)
            vals[K] += self.inv_mass_b[K] @ b
        return BrokenField(self.space.mesh, self.space.degree - 2, vals)

    def edge_jump_moment(self, u, w: BrokenField, e: int) -> float:
        """int_e {w} . [grad u x n_e] for a broken test field w."""
        coeffs = _coeffs_of(u)
        cv = coeffs.reshape(-1, 2)
        jump = (np.einsum("lk,qli->qki", cv[self.edofs[e, 0]], self.egrad[e, 0])
                - np.einsum("lk,qli->qki", cv[self.edofs[e, 1]], self.egrad[e, 1]))
        n = self.edges.i_normals[e]
        jn = np.einsum("qki,j->qkij", jump, n).reshape(len(jump), 8)
        wavg = 0.5 * sum(
            np.einsum("qm,mc->qc", self.elift[e, s],
                      w.values[int(self.edges.i_tris[e, s])])
            for s in range(2))
        return float(np.einsum("q,qc,qc->", self.ew[e], wavg, jn))

    def lifting_adjoint_pair(self, u, w: BrokenField):
        """(int_Omega R_h(grad u) . w, sum_e int_e {w} . [grad u x n_e]);
        the two sides agree by the defining adjoint identity."""
        lhs = self.broken_l2(self.lifting(u), w)
        rhs = sum(self.edge_jump_moment(u, w, e)
                  for e in range(self.edges.n_interior))
        return lhs, rhs

    # --------------------------------------------------------- C_R estimate

    def _cr_forms(self):
        """Sparse quadratic forms (A, B) with A(u) = int |R_h(grad u)|^2
        and B(u) = sum_e h_e^{-1} int |[grad u]|^2."""
        ni = self.edges.n_interior
        if ni == 0:
            raise TopologyError("C_R estimate requires interior edges")
        nq = len(self.edge_quad.points)
        nloc = self.space.n_local
        nlk = self.nlk
        ndof = self.space.n_dofs
        wref = self.edge_quad.weights
        normals = self.edges.i_normals

        # jump map J: rows (e, q, k, i), B = J^T J
        rows, cols, vals = [], [], []
        sqw = np.sqrt(wref)
        row_base = (np.arange(ni)[:, None, None, None] * (nq * 4)
                    + np.arange(nq)[None, :, None, None] * 4
                    + np.arange(2)[None, None, :, None] * 2
                    + np.arange(2)[None, None, None, :])
        for s, sgn in ((0, 1.0), (1, -1.0)):
            v = sgn * sqw[None, :, None, None] * self.egrad[:, s]
            # v: (ni, nq, nloc, 2); expand k
            for kcomp in range(2):
                r = np.broadcast_to(row_base[:, :, kcomp, :][:, :, None, :],
                                    (ni, nq, nloc, 2))
                c = 2 * self.edofs[:, s][:, None, :, None] + kcomp
                c = np.broadcast_to(c, (ni, nq, nloc, 2))
                rows.append(r.ravel())
                cols.append(c.ravel())
                vals.append(v.ravel())
        J = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ni * nq * 4, ndof)).tocsr()

        # lifting map L: coeffs -> broken nodal values (nt * nlk * 8)
        Mref_inv = np.linalg.inv(self.Mref_b)
        rows, cols, vals = [], [], []
        for s_row in range(2):
            tri = self.edges.i_tris[:, s_row].astype(np.int64)
            scale = 0.5 / self.area2[tri]
            for s_col, sgn in ((0, 1.0), (1, -1.0)):
                base = np.einsum("om,eqm,eqli->eoli",
                                 Mref_inv, self.ew[:, :, None] * self.elift[:, s_row],
                                 self.egrad[:, s_col])
                base = base * (sgn * scale)[:, None, None, None]
                for kcomp in range(2):
                    for icomp in range(2):
                        for jcomp in range(2):
                            comp = 4 * kcomp + 2 * icomp + jcomp
                            r = (tri[:, None, None] * nlk
                                 + np.arange(nlk)[None, :, None]) * 8 + comp
                            r = np.broadcast_to(r, (ni, nlk, nloc))
                            c = 2 * self.edofs[:, s_col][:, None, :] + kcomp
                            c = np.broadcast_to(c, (ni, nlk, nloc))
                            v = base[:, :, :, icomp] * normals[:, None, None, jcomp]
                            rows.append(r.ravel())
                            cols.append(c.ravel())
                            vals.append(v.ravel())
        nt = self.space.mesh.n_triangles
        L = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nt * nlk * 8, ndof)).tocsr()
        # broken mass: block 2A_t Mref per component
        Mb = sp.kron(sp.kron(sp.diags(self.area2), sp.csr_matrix(self.Mref_b)),
                     sp.eye(8)).tocsr()
        A = (L.T @ Mb @ L).tocsr()
        B = (J.T @ J).tocsr()
        return A, B

    def estimate_cr(self, iters: int = 60, seed: int = 0, tol: float = 1e-10):
        """Largest Rayleigh ratio of the lifting bound, by generalized
        power iteration x <- B^+ A x restricted to the complement of the
        jump-free kernel. Deterministic given the seed.

        The solve uses a tiny-shift LU of B; kernel leakage is harmless
        because ker(B) is contained in ker(A), so the Rayleigh quotient
        never sees it.
        """
        A, B = self._cr_forms()
        sigma = 1e-10 * float(B.diagonal().max())
        if sigma <= 0:
            raise TopologyError("jump form vanished; no interior edges?")
        lu = spla.splu((B + sigma * sp.eye(B.shape[0], format="csr")).tocsc())
        rng = np.random.default_rng(seed)
        x = B @ rng.standard_normal(A.shape[0])  # start in range(B)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iters):
            z = lu.solve(A @ x)
            bz = B @ z
            denom = float(z @ bz)
            if denom <= 0:
                break
            lam_new = float(z @ (A @ z)) / denom
            nz = np.linalg.norm(z)
            if nz == 0:
                break
            x = z / nz
            if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        return lam

    def check_stability(self, iters: int = 40, seed: int = 0):
        """Record whether alpha clears the estimated C_R (the
        equi-coercivity requirement alpha > C_R)."""
        cr = self.estimate_cr(iters=iters, seed=seed)
        self.alpha_stability = {"alpha": self.params.alpha, "c_r": cr,
                                "stable": self.params.alpha > cr}
        return self.alpha_stability


# ------------------------------------------------------------------ wrappers

def assemble_energy(u: Field, params: EnergyParams,
                    edges: EdgeSet | None = None) -> EnergyBreakdown:
    """One-shot energy evaluation. Repeated evaluation should construct an
    EnergyAssembler once and reuse it."""
    from .geometry import build_edges
    edges = edges if edges is not None else build_edges(u.space.mesh)
    return EnergyAssembler(u.space, edges, params).energy(u)


def assemble_gradient(u: Field, params: EnergyParams,
                      edges: EdgeSet | None = None) -> np.ndarray:
    from .geometry import build_edges
    edges = edges if edges is not None else build_edges(u.space.mesh)
    return EnergyAssembler(u.space, edges, params).gradient(u)


def lifting(u: Field, edges: EdgeSet, params: EnergyParams | None = None):
    return EnergyAssembler(u.space, edges, params or EnergyParams()).lifting(u)


def discrete_gradient(u: Field, edges: EdgeSet,
                      params: EnergyParams | None = None):
    asm = EnergyAssembler(u.space, edges, params or EnergyParams())
    return asm.discrete_gradient(u)


def broken_h2_seminorm(u: Field, edges: EdgeSet,
                       params: EnergyParams | None = None) -> float:
    asm = EnergyAssembler(u.space, edges, params or EnergyParams())
    return asm.broken_h2_seminorm(u)


def estimate_CR(space: Space, edges: EdgeSet, iters: int = 60,
                seed: int = 0) -> float:
    asm = EnergyAssembler(space, edges, EnergyParams())
    return asm.estimate_cr(iters=iters, seed=seed)
