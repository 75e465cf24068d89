"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the three hot assembly kernels (cell energy/gradient, interior-edge
energy/gradient, lifting) on a two-cell disk at a few mesh resolutions.
Run: python benchmarks/bench_assembly.py [--h 0.5 0.35 0.25]
"""

import argparse
import time

import numpy as np

from tetherfem import _kernels as K
from tetherfem.energy import EnergyAssembler, EnergyParams
from tetherfem.geometry import Cell, DomainSpec, build_edges, generate_mesh
from tetherfem.space import Space


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm-up (and jit compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench(h):
    spec = DomainSpec(shape="disk", radius=11.0,
                      cells=(Cell(center=(-2.5, 0.0), radius=1.0),
                             Cell(center=(2.5, 0.0), radius=1.0)), h=h)
    mesh = generate_mesh(spec)
    space = Space(mesh, 2)
    edges = build_edges(mesh)
    asm = EnergyAssembler(space, edges, EnergyParams())
    rng = np.random.default_rng(0)
    c = rng.standard_normal(space.n_dofs) * 0.05

    cell_args = (c, asm.dofs, asm.cw, asm.cgrad, asm.chess,
                 1, 60.0, 0.21, 1.0, 2, True)
    edge_args = (c, asm.edofs, asm.ew, asm.egrad, asm.ehess,
                 edges.i_normals, edges.i_lengths, 10.0, True)
    lift_args = (c, asm.edofs, asm.ew, asm.egrad, asm.elift,
                 edges.i_normals, edges.i_tris, asm.inv_mass_b,
                 mesh.n_triangles, asm.nlk)

    rows = []
    for name, jit_fn, np_fn, args in (
            ("cell energy+grad", K.cell_energy_grad_jit,
             K.cell_energy_grad_numpy, cell_args),
            ("edge energy+grad", K.edge_energy_grad_jit,
             K.edge_energy_grad_numpy, edge_args),
            ("lifting", K.lifting_jit, K.lifting_numpy, lift_args)):
        t_np = timeit(np_fn, *args)
        t_jit = timeit(jit_fn, *args) if jit_fn is not None else float("nan")
        rows.append((name, t_jit, t_np))
    return mesh.n_triangles, space.n_dofs, rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, nargs="+", default=[0.6, 0.4, 0.3])
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba not importable; only the numpy path will be timed")
    for h in args.h:
        nt, nd, rows = bench(h)
        print(f"\nh={h}: {nt} triangles, {nd} dofs")
        print(f"  {'kernel':<18} {'numba':>10} {'numpy':>10} {'speedup':>8}")
        for name, t_jit, t_np in rows:
            sp = t_np / t_jit if t_jit == t_jit else float("nan")
            print(f"  {name:<18} {t_jit * 1e3:>8.2f}ms {t_np * 1e3:>8.2f}ms "
                  f"{sp:>7.1f}x")


if __name__ == "__main__":
    main()
