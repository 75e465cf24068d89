"""Dirichlet data for contracting cells and nonlinear CG minimization.

Boundary conditions: the outer boundary is fixed (u = 0); each cell
boundary point x moves radially inward by delta_c * (x - c), i.e. the cell
of radius r_c contracts to (1 - delta_c) r_c. Minimization is
Polak-Ribiere+ nonlinear conjugate gradients on the free DOFs with a
strong-Wolfe line search, periodic restarts, and an energy history sampled
on a fixed stride. A continuation driver applies a monotone schedule of
contraction fractions, warm-starting each stage from the last.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

from .energy import EnergyAssembler, EnergyBreakdown
from .geometry import TAG_NONE, TAG_OUTER, TAG_CELL0
from .space import Field, Space

ENERGY_FLAG_THRESHOLD = 1e6


@dataclass(frozen=True)
class BoundaryData:
    """Per-cell contraction fractions delta_c in [0, 1); the outer boundary
    is held fixed."""

    contractions: tuple[float, ...] = ()

    def __post_init__(self):
        for d in self.contractions:
            if not 0.0 <= d < 1.0:
                raise ValueError("contraction fraction must lie in [0, 1)")


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 10000
    gtol_rel: float = 1e-6        # sup-norm tolerance relative to g0
    gtol_abs: float = 1e-12       # absolute floor (trivial boundary data)
    c1: float = 1e-4
    c2: float = 0.4
    max_probes: int = 25
    restart: int = 200
    log_stride: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("line search requires 0 < c1 < c2 < 1")


@dataclass
class SolveResult:
    field: Field | None
    history: list            # (iteration, energy, flagged) tuples
    converged: bool
    iterations: int
    grad_norm: float
    breakdown: EnergyBreakdown | None = None
    wolfe_log: list = field(default_factory=list)
    message: str = ""


def boundary_values(space: Space, bd: BoundaryData) -> np.ndarray:
    """Nodal interpolant of the contraction data g at every space node
    (zero away from cell boundaries)."""
    dom = space.mesh.domain
    n_cells = len(dom.cells) if dom is not None else 0
    if len(bd.contractions) != n_cells:
        raise ValueError(f"boundary data lists {len(bd.contractions)} cells, "
                         f"mesh domain has {n_cells}")
    vals = np.zeros((space.n_nodes, 2))
    tags = space.node_tags
    for i, delta in enumerate(bd.contractions):
        sel = tags == TAG_CELL0 + i
        if not np.any(sel):
            continue
        center = np.asarray(dom.cells[i].center)
        vals[sel] = -delta * (space.node_coords[sel] - center)
    return vals


def apply_dirichlet(space: Space, bd: BoundaryData):
    """Fixed-DOF mask, fixed values, and the initial Field (g on the
    boundary, zero in the interior)."""
    tags = space.node_tags
    boundary_edge_nodes = tags != TAG_NONE
    # outer tag sanity: every tagged node is OUTER or a known cell
    n_cells = len(bd.contractions)
    bad = boundary_edge_nodes & (tags != TAG_OUTER) & (
        (tags < TAG_CELL0) | (tags >= TAG_CELL0 + max(n_cells, 1)))
    if np.any(bad):
        raise ValueError("boundary node with unknown tag")
    g = boundary_values(space, bd)
    mask = np.repeat(boundary_edge_nodes, 2)
    values = np.zeros(space.n_dofs)
    values[mask] = g.reshape(-1)[mask]
    u0 = Field(space, values.copy())
    return mask, values, u0


def _record(history, it, energy):
    history.append((it, float(energy), int(energy > ENERGY_FLAG_THRESHOLD)))


def ncg_minimize(fun_grad, x0: np.ndarray, cfg: SolveConfig,
                 wall_state=None):
    """Polak-Ribiere+ NCG with strong-Wolfe line search on a plain vector
    problem. fun_grad(x) returns (value, gradient).

    The relative gradient tolerance is anchored to the initial gradient
    norm; when `wall_state()` reports that the latest evaluated state is
    dominated by the interpenetration penalty (an instantaneous-loading
    start inside the exponential wall), anchoring is deferred to the first
    wall-free iterate so a wall-inflated start cannot fake convergence.

    Returns (x, info) with info carrying the energy history, the per-step
    Wolfe log (alpha, phi0, dphi0, phi_a, dphi_a), convergence flag,
    iteration count, and final gradient sup-norm.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    g0_norm = float(np.max(np.abs(g))) if g.size else 0.0
    anchored = wall_state is None or not wall_state()
    g_ref = g0_norm
    gtol = max(cfg.gtol_rel * g_ref, cfg.gtol_abs)
    history = []
    wolfe_log = []
    _record(history, 0, f)

    # wrappers for scipy's line search
    cache = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = fun_grad(z)
        return cache[key][0]

    def grad(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = fun_grad(z)
        return cache[key][1]

    d = -g
    f_old = None
    alpha_prev = None
    converged = anchored and g0_norm <= gtol
    it = 0
    message = "gradient tolerance reached" if converged else ""
    while not converged and it < cfg.max_iters:
        it += 1
        with np.errstate(over="ignore", invalid="ignore"):
            dg = float(d @ g)
            if not math.isfinite(dg) or dg >= 0.0:
                d = -g
                dg = float(d @ g)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, _, _, f_new, _, dphi_new = line_search(
                fun, grad, x, d, gfk=g, old_fval=f, old_old_fval=f_old,
                c1=cfg.c1, c2=cfg.c2, maxiter=cfg.max_probes)
        if alpha is not None and f_new is not None and f_new <= f:
            x_new = x + alpha * d
            # scipy returns the gradient array at the accepted point in the
            # new_slope slot; reuse it instead of re-evaluating
            if isinstance(dphi_new, np.ndarray):
                g_new = dphi_new
                slope_new = float(g_new @ d)
            elif dphi_new is None:
                g_new = grad(x_new)
                slope_new = float(g_new @ d)
            else:
                g_new = grad(x_new)
                slope_new = float(dphi_new)
            wolfe_log.append((float(alpha), float(f), dg, float(f_new),
                              slope_new))
            alpha_prev = float(alpha)
        else:
            # Near the minimizer the energy differences fall below float
            # resolution and the Wolfe search stalls; a secant step on the
            # directional derivative (exact for quadratics) keeps the CG
            # sequence going on slope information alone.
            x_new = None
            at = alpha_prev if alpha_prev else 1.0 / max(-dg, 1.0)
            with np.errstate(over="ignore", invalid="ignore"):
                dphi_t = float(grad(x + at * d) @ d)
            if math.isfinite(dphi_t) and dphi_t > dg:
                a_sec = at * dg / (dg - dphi_t)
                if a_sec > 0 and math.isfinite(a_sec):
                    trial = x + a_sec * d
                    f_try = fun(trial)
                    with np.errstate(over="ignore", invalid="ignore"):
                        g_try = grad(trial)
                        slope_try = float(g_try @ d)
                    if (math.isfinite(f_try) and math.isfinite(slope_try)
                            and abs(slope_try) <= cfg.c2 * abs(dg)
                            and f_try <= f + 1e-12 * (1.0 + abs(f))):
                        x_new, f_new, g_new = trial, f_try, g_try
                        alpha_prev = a_sec
            if x_new is None:
                # last resort: backtracking steepest descent, starting from
                # a step that moves the iterate by at most O(1) so that
                # astronomically steep penalty walls can be backed off
                base = -g
                bn = float(np.max(np.abs(base)))
                alpha = min(1.0, 1.0 / max(bn, 1.0))
                with np.errstate(over="ignore", invalid="ignore"):
                    gn2 = float(g @ g)
                armijo = math.isfinite(gn2)
                for _ in range(80):
                    trial = x + alpha * base
                    f_try = fun(trial)
                    good = (f_try <= f - cfg.c1 * alpha * gn2) if armijo \
                        else (math.isfinite(f_try) and f_try < f)
                    if good:
                        x_new = trial
                        f_new = f_try
                        g_new = grad(trial)
                        break
                    alpha *= 0.5
                if x_new is None:
                    message = "line search failed to find any decrease"
                    break
                d = base  # restart direction
                alpha_prev = alpha
        f_old = f
        f, g_prev, g = f_new, g, g_new
        x = x_new
        gnorm = float(np.max(np.abs(g)))
        if not anchored and not wall_state():
            anchored = True
            g_ref = min(g_ref, gnorm)
            gtol = max(cfg.gtol_rel * g_ref, cfg.gtol_abs)
        if it % cfg.log_stride == 0:
            _record(history, it, f)
        if gnorm <= gtol and anchored:
            converged = True
            message = "gradient tolerance reached"
            break
        if it % cfg.restart == 0:
            d = -g
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                beta = float(g @ (g - g_prev)) / max(float(g_prev @ g_prev),
                                                     1e-300)
            if not math.isfinite(beta):
                beta = 0.0
            beta = max(beta, 0.0)
            d = -g + beta * d
    if history[-1][0] != it:
        _record(history, it, f)
    if not converged and not message:
        message = "iteration limit reached"
    info = {
        "history": history,
        "wolfe_log": wolfe_log,
        "converged": converged,
        "iterations": it,
        "grad_norm": float(np.max(np.abs(g))) if g.size else 0.0,
        "message": message,
    }
    return x, info


WALL_PHI_FACTOR = 1e3


def minimize(u0: Field, mask: np.ndarray, assembler: EnergyAssembler,
             cfg: SolveConfig) -> SolveResult:
    """Minimize the assembled energy over the free DOFs; fixed DOFs stay
    bitwise identical to u0."""
    full = u0.coeffs.copy()
    free = ~mask
    last_bd = [None]

    def fun_grad(x):
        full[free] = x
        bd, grad = assembler.energy_and_gradient(full)
        last_bd[0] = bd
        return bd.total, grad[free]

    def wall_state():
        bd = last_bd[0]
        return bd.bulk_phi > WALL_PHI_FACTOR * (1.0 + abs(bd.bulk_w))

    x, info = ncg_minimize(fun_grad, full[free], cfg, wall_state=wall_state)
    full[free] = x
    out = Field(u0.space, full)
    return SolveResult(field=out, history=info["history"],
                       converged=info["converged"],
                       iterations=info["iterations"],
                       grad_norm=info["grad_norm"],
                       breakdown=assembler.energy(full),
                       wolfe_log=info["wolfe_log"],
                       message=info["message"])


def continuation_solve(space: Space, assembler: EnergyAssembler,
                       schedule, cfg: SolveConfig):
    """Solve a monotone schedule of contraction fractions, warm-starting
    each stage from the previous minimizer with rescaled boundary data.
    Returns the per-stage SolveResults in order."""
    sched = [float(s) for s in schedule]
    if any(b < a for a, b in zip(sched, sched[1:])):
        raise ValueError("continuation schedule must be monotone")
    dom = space.mesh.domain
    n_cells = len(dom.cells) if dom is not None else 0
    results = []
    warm = None
    for delta in sched:
        bd = BoundaryData(contractions=(delta,) * n_cells)
        mask, values, u0 = apply_dirichlet(space, bd)
        if warm is not None:
            coeffs = warm.coeffs.copy()
            coeffs[mask] = values[mask]
            u0 = Field(space, coeffs)
        res = minimize(u0, mask, assembler, cfg)
        results.append(res)
        warm = res.field
    return results


def write_history_csv(path, history):
    """CSV energy history: `iteration,energy,flagged` with flagged = 1 when
    the energy exceeded 1e6."""
    with open(path, "w") as f:
        f.write("iteration,energy,flagged\n")
        for it, en, fl in history:
            f.write(f"{it},{en:.17g},{fl}\n")
