"""Hot assembly kernels: numba @njit loops with a pure-numpy fallback.

The numba path is the default; set TETHERFEM_NUMBA=0 to select the
vectorized numpy implementations instead. Both paths are kept importable
side by side (``*_numpy`` / ``*_jit``) so tests can assert agreement and
``benchmarks/bench_assembly.py`` can time them against each other.

Penalty kinds are encoded as ints: 0 none, 1 exponential, 2 polynomial.
Third-order 2x2x2 tensors are flattened as c = 4k + 2i + j.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import material as _mat

_env = os.environ.get("TETHERFEM_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _env not in ("0", "false", "off", "no")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

PEN_NONE = 0
PEN_EXP = 1
PEN_POLY = 2

_EXP_CLAMP = _mat.EXP_CLAMP


def pen_code(kind: str) -> int:
    return {_mat.PENALTY_NONE: PEN_NONE,
            _mat.PENALTY_EXPONENTIAL: PEN_EXP,
            _mat.PENALTY_POLYNOMIAL: PEN_POLY}[kind]


# ---------------------------------------------------------------------------
# cell kernel: bulk energy W + Phi, Hessian energy, and their gradients

def _cell_energy_grad_loops(coeffs, dofs, w, gtab, htab,
                            pen_kind, pen_a, pen_b, pen_c0, pen_m0,
                            want_grad):
    nt, nq, nloc, _ = gtab.shape
    grad_bulk = np.zeros(coeffs.size)
    grad_hess = np.zeros(coeffs.size)
    w_sum = 0.0
    phi_sum = 0.0
    hess_sum = 0.0
    n_clamped = 0
    c = np.empty((nloc, 2))
    F = np.empty((2, 2))
    H = np.empty((2, 2, 2))
    P = np.empty((2, 2))
    for t in range(nt):
        for l in range(nloc):
            g = dofs[t, l]
            c[l, 0] = coeffs[2 * g]
            c[l, 1] = coeffs[2 * g + 1]
        for q in range(nq):
            wq = w[t, q]
            for k in range(2):
                for d in range(2):
                    s = 0.0
                    for l in range(nloc):
                        s += c[l, k] * gtab[t, q, l, d]
                    F[k, d] = s
            F[0, 0] += 1.0
            F[1, 1] += 1.0
            i1v = F[0, 0] ** 2 + F[0, 1] ** 2 + F[1, 0] ** 2 + F[1, 1] ** 2
            jv = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
            w_sum += wq * (5.0 * i1v ** 3 - 9.0 * i1v ** 2
                           - 12.0 * i1v * jv ** 2 + 12.0 * jv ** 2 + 8.0) / 96.0
            # cofactor of F
            c00, c01 = F[1, 1], -F[1, 0]
            c10, c11 = -F[0, 1], F[0, 0]
            if pen_kind == PEN_EXP:
                expo = pen_a * (pen_b - jv)
                if expo > _EXP_CLAMP:
                    expo = _EXP_CLAMP
                    n_clamped += 1
                ph = math.exp(expo)
                phi_sum += wq * ph
                dphi = -pen_a * ph
                P[0, 0] = dphi * c00
                P[0, 1] = dphi * c01
                P[1, 0] = dphi * c10
                P[1, 1] = dphi * c11
            elif pen_kind == PEN_POLY:
                phi_sum += wq * pen_c0 * i1v ** pen_m0
                dphi = 2.0 * pen_m0 * pen_c0 * i1v ** (pen_m0 - 1)
                P[0, 0] = dphi * F[0, 0]
                P[0, 1] = dphi * F[0, 1]
                P[1, 0] = dphi * F[1, 0]
                P[1, 1] = dphi * F[1, 1]
            else:
                P[0, 0] = P[0, 1] = P[1, 0] = P[1, 1] = 0.0
            aw = (15.0 * i1v ** 2 - 18.0 * i1v - 12.0 * jv ** 2) * 2.0 / 96.0
            bw = 24.0 * jv * (1.0 - i1v) / 96.0
            P[0, 0] += aw * F[0, 0] + bw * c00
            P[0, 1] += aw * F[0, 1] + bw * c01
            P[1, 0] += aw * F[1, 0] + bw * c10
            P[1, 1] += aw * F[1, 1] + bw * c11

            hq = 0.0
            for k in range(2):
                for i in range(2):
                    for j in range(2):
                        s = 0.0
                        for l in range(nloc):
                            s += c[l, k] * htab[t, q, l, i, j]
                        H[k, i, j] = s
                        hq += s * s
            hess_sum += 0.5 * wq * hq

            if want_grad:
                for l in range(nloc):
                    g = dofs[t, l]
                    for k in range(2):
                        gb = (P[k, 0] * gtab[t, q, l, 0]
                              + P[k, 1] * gtab[t, q, l, 1])
                        gh = 0.0
                        for i in range(2):
                            for j in range(2):
                                gh += H[k, i, j] * htab[t, q, l, i, j]
                        grad_bulk[2 * g + k] += wq * gb
                        grad_hess[2 * g + k] += wq * gh
    return w_sum, phi_sum, hess_sum, n_clamped, grad_bulk, grad_hess


def _cell_energy_grad_numpy(coeffs, dofs, w, gtab, htab,
                            pen_kind, pen_a, pen_b, pen_c0, pen_m0,
                            want_grad):
    c = coeffs.reshape(-1, 2)[dofs]                         # (nt, nloc, 2)
    G = np.einsum("tlk,tqld->tqkd", c, gtab)                # grad u
    F = G.copy()
    F[..., 0, 0] += 1.0
    F[..., 1, 1] += 1.0
    i1v = _mat.i1(F)
    jv = _mat.det2(F)
    w_sum = float(np.sum(w * _mat.strain_energy(F)))
    if pen_kind == PEN_EXP:
        model = _mat.MaterialModel(_mat.PENALTY_EXPONENTIAL,
                                   pen_a=pen_a, pen_b=pen_b)
    elif pen_kind == PEN_POLY:
        model = _mat.MaterialModel(_mat.PENALTY_POLYNOMIAL,
                                   pen_c0=pen_c0, pen_m0=pen_m0)
    else:
        model = _mat.MaterialModel(_mat.PENALTY_NONE)
    phi, n_clamped = _mat.penalty_with_flag(F, model)
    phi_sum = float(np.sum(w * phi))
    H = np.einsum("tlk,tqlij->tqkij", c, htab)
    hess_sum = 0.5 * float(np.einsum("tq,tqkij,tqkij->", w, H, H))
    grad_bulk = np.zeros(coeffs.size)
    grad_hess = np.zeros(coeffs.size)
    if want_grad:
        P = _mat.strain_energy_dF(F) + _mat.penalty_dF(F, model)
        gb = np.einsum("tq,tqkd,tqld->tlk", w, P, gtab)
        gh = np.einsum("tq,tqkij,tqlij->tlk", w, H, htab)
        np.add.at(grad_bulk.reshape(-1, 2), dofs, gb)
        np.add.at(grad_hess.reshape(-1, 2), dofs, gh)
    del i1v, jv
    return w_sum, phi_sum, hess_sum, int(n_clamped), grad_bulk, grad_hess


# ---------------------------------------------------------------------------
# interior-edge kernel: consistency and jump-penalty terms

def _edge_energy_grad_loops(coeffs, edofs, ew, egrad, ehess,
                            normals, lengths, alpha, want_grad):
    ni, _, nqe, nloc, _ = egrad.shape
    grad = np.zeros(coeffs.size)
    cons_raw = 0.0
    pen_sum = 0.0
    cp = np.empty((nloc, 2))
    cm = np.empty((nloc, 2))
    jump = np.empty((2, 2))
    avgH = np.empty((2, 2, 2))
    for e in range(ni):
        n0 = normals[e, 0]
        n1 = normals[e, 1]
        ainv = alpha / lengths[e]
        for l in range(nloc):
            gp = edofs[e, 0, l]
            gm = edofs[e, 1, l]
            cp[l, 0] = coeffs[2 * gp]
            cp[l, 1] = coeffs[2 * gp + 1]
            cm[l, 0] = coeffs[2 * gm]
            cm[l, 1] = coeffs[2 * gm + 1]
        for q in range(nqe):
            wq = ew[e, q]
            for k in range(2):
                for i in range(2):
                    sp = 0.0
                    sm = 0.0
                    for l in range(nloc):
                        sp += cp[l, k] * egrad[e, 0, q, l, i]
                        sm += cm[l, k] * egrad[e, 1, q, l, i]
                    jump[k, i] = sp - sm
                    for j in range(2):
                        hp = 0.0
                        hm = 0.0
                        for l in range(nloc):
                            hp += cp[l, k] * ehess[e, 0, q, l, i, j]
                            hm += cm[l, k] * ehess[e, 1, q, l, i, j]
                        avgH[k, i, j] = 0.5 * (hp + hm)
            cq = 0.0
            jq = 0.0
            for k in range(2):
                for i in range(2):
                    cq += (avgH[k, i, 0] * n0 + avgH[k, i, 1] * n1) * jump[k, i]
                    jq += jump[k, i] ** 2
            cons_raw += wq * cq
            pen_sum += ainv * wq * jq
            if want_grad:
                for s in range(2):
                    sgn = 1.0 if s == 0 else -1.0
                    for l in range(nloc):
                        g = edofs[e, s, l]
                        for k in range(2):
                            d1 = 0.0
                            d2 = 0.0
                            dp = 0.0
                            for i in range(2):
                                gi = egrad[e, s, q, l, i]
                                d1 += (avgH[k, i, 0] * n0
                                       + avgH[k, i, 1] * n1) * sgn * gi
                                dp += jump[k, i] * sgn * gi
                                for j in range(2):
                                    nj = n0 if j == 0 else n1
                                    d2 += 0.5 * ehess[e, s, q, l, i, j] \
                                        * jump[k, i] * nj
                            grad[2 * g + k] += wq * (-(d1 + d2)
                                                     + 2.0 * ainv * dp)
    return cons_raw, pen_sum, grad


def _edge_energy_grad_numpy(coeffs, edofs, ew, egrad, ehess,
                            normals, lengths, alpha, want_grad):
    cv = coeffs.reshape(-1, 2)
    cp = cv[edofs[:, 0]]                                    # (ni, nloc, 2)
    cm = cv[edofs[:, 1]]
    Gp = np.einsum("elk,eqli->eqki", cp, egrad[:, 0])
    Gm = np.einsum("elk,eqli->eqki", cm, egrad[:, 1])
    jump = Gp - Gm                                          # (ni,nqe,2,2)
    Hp = np.einsum("elk,eqlij->eqkij", cp, ehess[:, 0])
    Hm = np.einsum("elk,eqlij->eqkij", cm, ehess[:, 1])
    avgH = 0.5 * (Hp + Hm)
    An = np.einsum("eqkij,ej->eqki", avgH, normals)
    cons_raw = float(np.einsum("eq,eqki,eqki->", ew, An, jump))
    ainv = alpha / lengths
    pen_sum = float(np.einsum("e,eq,eqki,eqki->", ainv, ew, jump, jump))
    grad = np.zeros(coeffs.size)
    if want_grad:
        Jn = np.einsum("eqki,ej->eqkij", jump, normals)
        for s, sgn in ((0, 1.0), (1, -1.0)):
            d1 = sgn * np.einsum("eq,eqki,eqli->elk", ew, An, egrad[:, s])
            d2 = 0.5 * np.einsum("eq,eqkij,eqlij->elk", ew, Jn, ehess[:, s])
            dp = sgn * np.einsum("e,eq,eqki,eqli->elk",
                                 2.0 * ainv, ew, jump, egrad[:, s])
            np.add.at(grad.reshape(-1, 2), edofs[:, s], -(d1 + d2) + dp)
    return cons_raw, pen_sum, grad


# ---------------------------------------------------------------------------
# lifting kernel: accumulate R_h(grad u) into broken nodal coefficients

def _lifting_loops(coeffs, edofs, ew, egrad, elift, normals, etris,
                   inv_m, nt, nlk):
    """inv_m: (nt, nlk, nlk) inverses of the element mass matrices of the
    broken space. Output (nt, nlk, 8) with components c = 4k + 2i + j."""
    ni, _, nqe, nloc, _ = egrad.shape
    out = np.zeros((nt, nlk, 8))
    b = np.empty((nlk, 8))
    jump = np.empty((2, 2))
    cp = np.empty((nloc, 2))
    cm = np.empty((nloc, 2))
    for e in range(ni):
        n0 = normals[e, 0]
        n1 = normals[e, 1]
        for l in range(nloc):
            gp = edofs[e, 0, l]
            gm = edofs[e, 1, l]
            cp[l, 0] = coeffs[2 * gp]
            cp[l, 1] = coeffs[2 * gp + 1]
            cm[l, 0] = coeffs[2 * gm]
            cm[l, 1] = coeffs[2 * gm + 1]
        for s in range(2):
            K = etris[e, s]
            for i0 in range(nlk):
                for c0 in range(8):
                    b[i0, c0] = 0.0
            for q in range(nqe):
                wq = ew[e, q]
                for k in range(2):
                    for i in range(2):
                        sp = 0.0
                        sm = 0.0
                        for l in range(nloc):
                            sp += cp[l, k] * egrad[e, 0, q, l, i]
                            sm += cm[l, k] * egrad[e, 1, q, l, i]
                        jump[k, i] = sp - sm
                for i0 in range(nlk):
                    psi = elift[e, s, q, i0]
                    for k in range(2):
                        for i in range(2):
                            b[i0, 4 * k + 2 * i + 0] += 0.5 * wq * psi \
                                * jump[k, i] * n0
                            b[i0, 4 * k + 2 * i + 1] += 0.5 * wq * psi \
                                * jump[k, i] * n1
            for i0 in range(nlk):
                for c0 in range(8):
                    s2 = 0.0
                    for j0 in range(nlk):
                        s2 += inv_m[K, i0, j0] * b[j0, c0]
                    out[K, i0, c0] += s2
    return out


def _lifting_numpy(coeffs, edofs, ew, egrad, elift, normals, etris,
                   inv_m, nt, nlk):
    cv = coeffs.reshape(-1, 2)
    cp = cv[edofs[:, 0]]
    cm = cv[edofs[:, 1]]
    Gp = np.einsum("elk,eqli->eqki", cp, egrad[:, 0])
    Gm = np.einsum("elk,eqli->eqki", cm, egrad[:, 1])
    jn = np.einsum("eqki,ej->eqkij", Gp - Gm, normals)      # (ni,nqe,2,2,2)
    jn = jn.reshape(jn.shape[0], jn.shape[1], 8)
    out = np.zeros((nt, nlk, 8))
    for s in range(2):
        b = 0.5 * np.einsum("eq,eqm,eqc->emc", ew, elift[:, s], jn)
        sol = np.einsum("emn,enc->emc", inv_m[etris[:, s]], b)
        np.add.at(out, etris[:, s], sol)
    return out


if NUMBA_ENABLED:
    cell_energy_grad_jit = njit(cache=True)(_cell_energy_grad_loops)
    edge_energy_grad_jit = njit(cache=True)(_edge_energy_grad_loops)
    lifting_jit = njit(cache=True)(_lifting_loops)
    cell_energy_grad = cell_energy_grad_jit
    edge_energy_grad = edge_energy_grad_jit
    lifting_accumulate = lifting_jit
elif HAVE_NUMBA:  # numba importable but disabled by env flag
    cell_energy_grad_jit = njit(cache=True)(_cell_energy_grad_loops)
    edge_energy_grad_jit = njit(cache=True)(_edge_energy_grad_loops)
    lifting_jit = njit(cache=True)(_lifting_loops)
    cell_energy_grad = _cell_energy_grad_numpy
    edge_energy_grad = _edge_energy_grad_numpy
    lifting_accumulate = _lifting_numpy
else:
    cell_energy_grad_jit = None
    edge_energy_grad_jit = None
    lifting_jit = None
    cell_energy_grad = _cell_energy_grad_numpy
    edge_energy_grad = _edge_energy_grad_numpy
    lifting_accumulate = _lifting_numpy

cell_energy_grad_numpy = _cell_energy_grad_numpy
edge_energy_grad_numpy = _edge_energy_grad_numpy
lifting_numpy = _lifting_numpy
