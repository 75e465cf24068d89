"""Configuration parsing, experiment orchestration, and serialization.

Config files are INI-style `key = value` text with sections [domain],
[cells], [model], [solver], [output]; unknown keys are rejected and parse
errors carry line numbers. Results are written as legacy-VTK ASCII
(deformed state with per-cell J and density), CSV energy histories, and a
human-readable manifest echoing every knob that affects the run.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .energy import EnergyAssembler, EnergyParams
from .geometry import (Cell, DomainSpec, Mesh, build_edges, generate_mesh,
                       refine_uniform, shape_metrics, write_mesh)
from .material import (MaterialModel, PENALTY_EXPONENTIAL, PENALTY_NONE,
                       PENALTY_POLYNOMIAL)
from .solver import SolveConfig, continuation_solve, write_history_csv
from .space import Field, Space, cell_rule
from . import verify as _verify


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec
    q: int = 2
    epsilon: float = 5e-3
    alpha: float = 10.0
    auto_alpha: bool = False
    material: MaterialModel = field(default_factory=MaterialModel)
    schedule: tuple[float, ...] = (0.5,)
    solve: SolveConfig = field(default_factory=SolveConfig)
    out_dir: str = "out"

    def validate(self):
        self.domain.validate()
        if self.q < 2:
            raise ConfigError("key 'q': degree must be >= 2")
        if self.epsilon < 0:
            raise ConfigError("key 'epsilon': must be >= 0")
        if any(not 0.0 <= s < 1.0 for s in self.schedule):
            raise ConfigError("key 'schedule': fractions must lie in [0, 1)")
        if any(b < a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ConfigError("key 'schedule': must be monotone")


_SECTIONS = ("domain", "cells", "model", "solver", "output")
_KEYS = {
    "domain": {"shape", "radius", "width", "height", "h"},
    "model": {"q", "epsilon", "alpha", "penalty", "penalty_a", "penalty_b",
              "penalty_c0", "penalty_m0"},
    "solver": {"schedule", "max_iters", "tol", "c1", "c2", "max_probes",
               "restart", "log_stride", "seed"},
    "output": {"dir"},
}


def _raw_parse(text: str):
    """Sectioned key=value pairs with line numbers; '#' and ';' comment."""
    data: dict[str, dict[str, str]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if section != "cells" and key not in _KEYS[section]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' "
                              f"in section [{section}]")
        if section == "cells" and not key.startswith("cell"):
            raise ConfigError(f"line {lineno}: cell entries are "
                              f"'cell<k> = x y radius'")
        if key in data[section]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        data[section][key] = val
    return data


def _get_float(sec, key, default, positive=False, nonneg=False):
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing required key '{key}'")
        return default
    try:
        v = float(sec[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not a number: {sec[key]!r}") from None
    if positive and v <= 0:
        raise ConfigError(f"key '{key}': must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"key '{key}': must be nonnegative")
    return v


def _get_int(sec, key, default):
    if key not in sec:
        return default
    try:
        return int(sec[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not an integer") from None


def parse_config(text: str) -> RunConfig:
    data = _raw_parse(text)
    dom_sec = data.get("domain", {})
    shape = dom_sec.get("shape", "disk").lower()
    cells = []
    cell_sec = data.get("cells", {})
    for k in sorted(cell_sec, key=lambda s: (len(s), s)):
        parts = cell_sec[k].split()
        if len(parts) != 3:
            raise ConfigError(f"key '{k}': expected 'x y radius'")
        x, y, r = (float(p) for p in parts)
        if r <= 0:
            raise ConfigError(f"key '{k}': cell radius must be positive")
        cells.append(Cell(center=(x, y), radius=r))
    domain = DomainSpec(
        shape=shape,
        radius=_get_float(dom_sec, "radius", 0.0, nonneg=True),
        width=_get_float(dom_sec, "width", 0.0, nonneg=True),
        height=_get_float(dom_sec, "height", 0.0, nonneg=True),
        cells=tuple(cells),
        h=_get_float(dom_sec, "h", 0.5, positive=True))

    mod = data.get("model", {})
    pen = mod.get("penalty", PENALTY_EXPONENTIAL).lower()
    if pen not in (PENALTY_EXPONENTIAL, PENALTY_POLYNOMIAL, PENALTY_NONE):
        raise ConfigError(f"key 'penalty': unknown kind {pen!r}")
    material = MaterialModel(
        penalty=pen,
        pen_a=_get_float(mod, "penalty_a", 60.0),
        pen_b=_get_float(mod, "penalty_b", 0.21),
        pen_c0=_get_float(mod, "penalty_c0", 1.0),
        pen_m0=_get_int(mod, "penalty_m0", 2))
    alpha_raw = mod.get("alpha", "10")
    auto_alpha = alpha_raw.strip().lower() == "auto"
    alpha = 10.0 if auto_alpha else _get_float(mod, "alpha", 10.0, positive=True)

    sol = data.get("solver", {})
    schedule = tuple(float(s) for s in sol.get("schedule", "0.5").split())
    solve = SolveConfig(
        max_iters=_get_int(sol, "max_iters", 10000),
        gtol_rel=_get_float(sol, "tol", 1e-6, positive=True),
        c1=_get_float(sol, "c1", 1e-4),
        c2=_get_float(sol, "c2", 0.4),
        max_probes=_get_int(sol, "max_probes", 25),
        restart=_get_int(sol, "restart", 200),
        log_stride=_get_int(sol, "log_stride", 100),
        seed=_get_int(sol, "seed", 0))

    cfg = RunConfig(domain=domain,
                    q=_get_int(mod, "q", 2),
                    epsilon=_get_float(mod, "epsilon", 5e-3, nonneg=True),
                    alpha=alpha, auto_alpha=auto_alpha, material=material,
                    schedule=schedule, solve=solve,
                    out_dir=data.get("output", {}).get("dir", "out"))
    cfg.validate()
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Inverse of parse_config: parse(format(cfg)) round-trips exactly."""
    d = cfg.domain
    lines = ["[domain]", f"shape = {d.shape}"]
    if d.shape == "disk":
        lines.append(f"radius = {d.radius!r}")
    else:
        lines.append(f"width = {d.width!r}")
        lines.append(f"height = {d.height!r}")
    lines.append(f"h = {d.h!r}")
    if d.cells:
        lines.append("")
        lines.append("[cells]")
        for i, c in enumerate(d.cells):
            lines.append(f"cell{i} = {c.center[0]!r} {c.center[1]!r} {c.radius!r}")
    m = cfg.material
    lines += ["", "[model]", f"q = {cfg.q}", f"epsilon = {cfg.epsilon!r}",
              f"alpha = {'auto' if cfg.auto_alpha else repr(cfg.alpha)}",
              f"penalty = {m.penalty}",
              f"penalty_a = {m.pen_a!r}", f"penalty_b = {m.pen_b!r}",
              f"penalty_c0 = {m.pen_c0!r}", f"penalty_m0 = {m.pen_m0}"]
    s = cfg.solve
    lines += ["", "[solver]",
              "schedule = " + " ".join(repr(x) for x in cfg.schedule),
              f"max_iters = {s.max_iters}", f"tol = {s.gtol_rel!r}",
              f"c1 = {s.c1!r}", f"c2 = {s.c2!r}",
              f"max_probes = {s.max_probes}", f"restart = {s.restart}",
              f"log_stride = {s.log_stride}", f"seed = {s.seed}"]
    lines += ["", "[output]", f"dir = {cfg.out_dir}", ""]
    return "\n".join(lines)


# ----------------------------------------------------------------- VTK

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def element_mean_J(u: Field, quad_degree: int = 6) -> np.ndarray:
    """Per-element mean of det(1 + grad u)."""
    space = u.space
    rule = cell_rule(quad_degree)
    dN = space.ref.grad(rule.points[:, 1:3])
    dNx = np.einsum("qla,tad->tqld", dN, space.tri_Binv)
    c = u.coeffs.reshape(-1, 2)[space.cell_dofs]
    G = np.einsum("tqld,tlk->tqkd", dNx, c)
    F = G.copy()
    F[..., 0, 0] += 1.0
    F[..., 1, 1] += 1.0
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return J @ rule.weights / rule.weights.sum()


def write_vtk(mesh: Mesh, u: Field, path):
    """Legacy-VTK ASCII unstructured grid of the deformed state: points
    x + u(x), point vector `displacement`, cell scalars `J` (mean
    det(1 + grad u)) and `density` = 1/J clamped to [0, 50]."""
    disp = u.node_values()[:mesh.n_vertices]
    pts = mesh.vertices + disp
    J = element_mean_J(u)
    with np.errstate(divide="ignore"):
        density = np.clip(np.where(J != 0, 1.0 / J, np.inf), 0.0, 50.0)
    nt = mesh.n_triangles
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("tetherfem deformed state\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(pts)} double\n")
        for x, y in pts:
            f.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        f.write(f"CELLS {nt} {4 * nt}\n")
        for i, j, k in mesh.triangles:
            f.write(f"3 {i} {j} {k}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("5\n" * nt)
        f.write(f"POINT_DATA {len(pts)}\n")
        f.write("VECTORS displacement double\n")
        for ux, uy in disp:
            f.write(f"{_fmt(ux)} {_fmt(uy)} 0\n")
        f.write(f"CELL_DATA {nt}\n")
        f.write("SCALARS J double 1\nLOOKUP_TABLE default\n")
        for v in J:
            f.write(_fmt(v) + "\n")
        f.write("SCALARS density double 1\nLOOKUP_TABLE default\n")
        for v in density:
            f.write(_fmt(v) + "\n")


# ------------------------------------------------------------- experiment

MANIFEST_KEYS = (
    "shape", "radius", "width", "height", "h", "cells", "q", "epsilon",
    "alpha", "auto_alpha", "alpha_used", "penalty", "penalty_a", "penalty_b",
    "penalty_c0", "penalty_m0", "schedule", "max_iters", "tol", "c1", "c2",
    "max_probes", "restart", "log_stride", "seed",
)


def run_experiment(cfg: RunConfig, out_dir=None):
    """Mesh, solve the continuation schedule, and serialize VTK + CSV +
    manifest. Returns the manifest dict."""
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    mesh = generate_mesh(cfg.domain)
    write_mesh(mesh, out / "mesh.txt")
    space = Space(mesh, cfg.q)
    edges = build_edges(mesh)
    t_mesh = time.perf_counter() - t0

    d = cfg.domain
    manifest: dict[str, object] = {
        "shape": d.shape, "radius": d.radius, "width": d.width,
        "height": d.height, "h": d.h,
        "cells": " ".join(f"({c.center[0]},{c.center[1]},{c.radius})"
                          for c in d.cells),
        "q": cfg.q, "epsilon": cfg.epsilon, "alpha": cfg.alpha,
        "auto_alpha": cfg.auto_alpha,
        "penalty": cfg.material.penalty, "penalty_a": cfg.material.pen_a,
        "penalty_b": cfg.material.pen_b, "penalty_c0": cfg.material.pen_c0,
        "penalty_m0": cfg.material.pen_m0,
        "schedule": " ".join(str(s) for s in cfg.schedule),
        "max_iters": cfg.solve.max_iters, "tol": cfg.solve.gtol_rel,
        "c1": cfg.solve.c1, "c2": cfg.solve.c2,
        "max_probes": cfg.solve.max_probes, "restart": cfg.solve.restart,
        "log_stride": cfg.solve.log_stride, "seed": cfg.solve.seed,
        "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
        "mesh_seconds": round(t_mesh, 3),
    }
    hmax, ratio, minang = shape_metrics(mesh)
    manifest["mesh_h_max"] = hmax
    manifest["mesh_shape_ratio_max"] = ratio
    manifest["mesh_min_angle_deg"] = minang

    alpha_used = cfg.alpha
    params = EnergyParams(epsilon=cfg.epsilon, alpha=alpha_used,
                          material=cfg.material)
    asm = EnergyAssembler(space, edges, params)
    if cfg.auto_alpha:
        t1 = time.perf_counter()
        cr = asm.estimate_cr(iters=40, seed=cfg.solve.seed)
        alpha_used = 2.0 * cr
        manifest["estimate_cr"] = cr
        manifest["estimate_cr_seconds"] = round(time.perf_counter() - t1, 3)
        params = EnergyParams(epsilon=cfg.epsilon, alpha=alpha_used,
                              material=cfg.material)
        asm = EnergyAssembler(space, edges, params)
        asm.alpha_stability = {"alpha": alpha_used, "c_r": cr,
                               "stable": alpha_used > cr}
    manifest["alpha_used"] = alpha_used

    t2 = time.perf_counter()
    results = continuation_solve(space, asm, cfg.schedule, cfg.solve)
    manifest["solve_seconds"] = round(time.perf_counter() - t2, 3)

    for k, (delta, res) in enumerate(zip(cfg.schedule, results)):
        tag = f"stage{k}"
        write_vtk(mesh, res.field, out / f"{tag}.vtk")
        write_history_csv(out / f"energy_{tag}.csv", res.history)
        bd = res.breakdown
        manifest[f"{tag}_delta"] = delta
        manifest[f"{tag}_converged"] = res.converged
        manifest[f"{tag}_iterations"] = res.iterations
        manifest[f"{tag}_grad_norm"] = res.grad_norm
        manifest[f"{tag}_energy_total"] = bd.total
        manifest[f"{tag}_bulk_w"] = bd.bulk_w
        manifest[f"{tag}_bulk_phi"] = bd.bulk_phi
        manifest[f"{tag}_hess_term"] = bd.hess_term
        manifest[f"{tag}_consistency_term"] = bd.consistency_term
        manifest[f"{tag}_penalty_term"] = bd.penalty_term
        manifest[f"{tag}_n_overflow"] = bd.n_overflow

    with open(out / "manifest.txt", "w") as f:
        for k, v in manifest.items():
            f.write(f"{k} = {v}\n")
    return manifest, results


# ----------------------------------------------------------------- verify

def run_verify_battery(q: int = 2, h: float = 0.45, seed: int = 0):
    """Quick identity battery on a small one-cell disk; returns a list of
    (name, passed, detail) rows."""
    rng = np.random.default_rng(seed)
    spec = DomainSpec(shape="disk", radius=3.0,
                      cells=(Cell(center=(0.0, 0.0), radius=1.0),), h=h)
    mesh = generate_mesh(spec)
    space = Space(mesh, q)
    edges = build_edges(mesh)
    asm = EnergyAssembler(space, edges, EnergyParams(epsilon=5e-3, alpha=10.0))
    rows = []

    u = rng.standard_normal(space.n_dofs) * 0.05
    a_form = asm.psi_ho(u)
    b_form = asm.psi_ho_via_discrete_gradient(u)
    err = abs(a_form - b_form) / (1.0 + abs(a_form))
    rows.append(("energy_form_identity", err < 1e-10, f"rel err {err:.2e}"))

    from .space import BrokenField
    w = BrokenField(mesh, q - 2,
                    rng.standard_normal((mesh.n_triangles, asm.nlk, 8)))
    lhs, rhs = asm.lifting_adjoint_pair(u, w)
    err = abs(lhs - rhs) / max(abs(rhs), 1e-30)
    rows.append(("lifting_adjoint", err < 1e-11, f"rel err {err:.2e}"))

    bd0, g = asm.energy_and_gradient(u)
    ok = True
    worst = 0.0
    for _ in range(3):
        v = rng.standard_normal(space.n_dofs)
        v /= np.linalg.norm(v)
        hstep = 1e-6
        fp = asm.energy(u + hstep * v).total
        fm = asm.energy(u - hstep * v).total
        fd = (fp - fm) / (2 * hstep)
        an = float(g @ v)
        rel = abs(fd - an) / max(abs(an), 1e-12)
        worst = max(worst, rel)
        ok = ok and rel < 1e-6
    rows.append(("gradient_fd", ok, f"worst rel err {worst:.2e}"))

    from .material import strain_energy, angular_average_energy
    w_id = abs(float(strain_energy(np.eye(2))))
    ang = abs(angular_average_energy(2.0, 1.0, 1024)
              - float(strain_energy(np.diag([2.0, 1.0]))))
    rows.append(("material_identities", w_id < 1e-14 and ang < 1e-9,
                 f"W(I) {w_id:.1e}, angular {ang:.1e}"))
    return rows


# -------------------------------------------------------------------- CLI

def _add_common(p):
    p.add_argument("--threads", type=int, default=None,
                   help="numba thread count (assembly itself is "
                        "single-threaded and deterministic)")
    p.add_argument("--seed", type=int, default=None)


def _apply_threads(args):
    if getattr(args, "threads", None):
        try:
            import numba
            numba.set_num_threads(args.threads)
        except ImportError:
            pass


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="tetherfem",
        description="C0 interior-penalty toolkit for contracting-cell "
                    "phase-transition experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="generate a mesh from a config")
    p_mesh.add_argument("--spec", required=True)
    p_mesh.add_argument("--out", required=True)
    p_mesh.add_argument("--refine", type=int, default=0)
    _add_common(p_mesh)

    p_solve = sub.add_parser("solve", help="run the experiment in a config")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None)
    p_solve.add_argument("--auto-alpha", action="store_true")
    _add_common(p_solve)

    p_ver = sub.add_parser("verify", help="run the quick identity battery")
    p_ver.add_argument("--q", type=int, default=2)
    p_ver.add_argument("--h", type=float, default=0.45)
    _add_common(p_ver)

    p_rates = sub.add_parser("rates", help="convergence-rate studies")
    p_rates.add_argument("--study", required=True,
                         choices=["interp", "jump", "trace", "poincare"])
    p_rates.add_argument("--levels", type=int, default=4)
    p_rates.add_argument("--out", required=True)
    p_rates.add_argument("--q", type=int, default=2)
    _add_common(p_rates)

    args = ap.parse_args(argv)
    _apply_threads(args)

    if args.command == "mesh":
        cfg = parse_config(Path(args.spec).read_text())
        mesh = generate_mesh(cfg.domain)
        for _ in range(args.refine):
            mesh = refine_uniform(mesh)
        write_mesh(mesh, args.out)
        hmax, ratio, ang = shape_metrics(mesh)
        print(f"wrote {args.out}: {mesh.n_vertices} vertices, "
              f"{mesh.n_triangles} triangles, h_max {hmax:.4g}, "
              f"shape ratio {ratio:.3g}, min angle {ang:.1f} deg")
        return 0

    if args.command == "solve":
        cfg = parse_config(Path(args.config).read_text())
        if args.auto_alpha:
            cfg = replace(cfg, auto_alpha=True)
        if args.seed is not None:
            cfg = replace(cfg, solve=replace(cfg.solve, seed=args.seed))
        manifest, results = run_experiment(cfg, out_dir=args.out)
        out = args.out if args.out is not None else cfg.out_dir
        conv = all(r.converged for r in results)
        print(f"wrote {out}/manifest.txt; stages converged: {conv}")
        return 0 if conv else 2

    if args.command == "verify":
        rows = run_verify_battery(q=args.q, h=args.h,
                                  seed=args.seed if args.seed is not None else 0)
        ok_all = True
        for name, ok, detail in rows:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            ok_all = ok_all and ok
        return 0 if ok_all else 1

    if args.command == "rates":
        u, gu, hu = _verify.default_smooth_solution()
        footer = []
        if args.study == "interp":
            reports = _verify.interp_rate_study(u, gu, hu, levels=args.levels,
                                                q=args.q)
            names = ["L2", "H1", "brokenH2"]
            rows = [(h,) + tuple(r.errors[i] for r in reports)
                    for i, h in enumerate(reports[0].hs)]
            header = "h," + ",".join("error_" + n for n in names)
            for n, r in zip(names, reports):
                footer.append(f"# fitted_slope_{n} = {r.slope:.6g} "
                              f"(target {r.target}, pass {r.passed})")
        elif args.study == "jump":
            rep = _verify.jump_decay_study(u, levels=args.levels, q=args.q)
            header = "h,error"
            rows = list(zip(rep.hs, rep.errors))
            footer.append(f"# fitted_slope = {rep.slope:.6g} "
                          f"(target {rep.target}, pass {rep.passed})")
        else:
            # constant probes measured across refinement levels
            vals = []
            hs = []
            meshes = _verify._unit_square_levels(max(args.levels, 3))
            for mesh in meshes:
                space = Space(mesh, args.q)
                hs.append(shape_metrics(mesh)[0])
                if args.study == "trace":
                    vals.append(_verify.trace_constant_probe(space))
                else:
                    vals.append(_verify.poincare_probe(
                        space, build_edges(mesh), n_samples=25,
                        seed=args.seed if args.seed is not None else 0))
            header = "h,error"
            rows = list(zip(hs, vals))
            drift = (max(vals) - min(vals)) / max(vals)
            footer.append(f"# fitted_slope = {_verify.fit_slope(hs, vals):.6g}")
            footer.append(f"# relative_drift = {drift:.6g}")
        with open(args.out, "w") as f:
            f.write(header + "\n")
            for row in rows:
                f.write(",".join(f"{v:.12g}" for v in row) + "\n")
            for line in footer:
                f.write(line + "\n")
        print("\n".join(footer))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
