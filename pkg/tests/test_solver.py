import numpy as np
import pytest

from tetherfem.energy import EnergyAssembler, EnergyParams
from tetherfem.geometry import Cell, DomainSpec, build_edges, generate_mesh
from tetherfem.solver import (BoundaryData, SolveConfig, apply_dirichlet,
                              boundary_values, continuation_solve, minimize,
                              ncg_minimize, write_history_csv)
from tetherfem.space import Space


@pytest.fixture(scope="module")
def disk_setup():
    spec = DomainSpec(shape="disk", radius=5.0,
                      cells=(Cell(center=(0.0, 0.0), radius=1.0),), h=0.5)
    mesh = generate_mesh(spec)
    space = Space(mesh, 2)
    edges = build_edges(mesh)
    asm = EnergyAssembler(space, edges, EnergyParams(epsilon=5e-3, alpha=10.0))
    return mesh, space, edges, asm


class TestApplyDirichlet:
    def test_zero_contraction(self, disk_setup):
        _, space, _, _ = disk_setup
        mask, values, u0 = apply_dirichlet(space, BoundaryData((0.0,)))
        assert np.all(values == 0.0)
        assert np.all(u0.coeffs == 0.0)
        assert mask.sum() > 0

    def test_radial_formula_single_cell(self, disk_setup):
        _, space, _, _ = disk_setup
        bd = BoundaryData((0.6,))
        g = boundary_values(space, bd)
        # find the node closest to (r_c, 0) on the cell circle
        on_cell = np.flatnonzero(space.node_tags == 2)
        pts = space.node_coords[on_cell]
        i = on_cell[np.argmin(np.hypot(pts[:, 0] - 1.0, pts[:, 1]))]
        x = space.node_coords[i]
        assert np.allclose(g[i], -0.6 * x, atol=1e-14)

    def test_two_cells_displace_toward_own_center(self):
        spec = DomainSpec(shape="disk", radius=11.0,
                          cells=(Cell(center=(-2.5, 0.0), radius=1.0),
                                 Cell(center=(2.5, 0.0), radius=1.0)), h=0.8)
        mesh = generate_mesh(spec)
        space = Space(mesh, 2)
        g = boundary_values(space, BoundaryData((0.4, 0.4)))
        for i, center in ((0, (-2.5, 0.0)), (1, (2.5, 0.0))):
            sel = space.node_tags == 2 + i
            x = space.node_coords[sel]
            want = -0.4 * (x - np.asarray(center))
            assert np.allclose(g[sel], want, atol=1e-14)
            # vertex nodes sit on the analytic circle, so there |g| = 0.4
            nv = space.mesh.n_vertices
            vsel = sel[:nv]
            vg = g[:nv][vsel]
            assert len(vg)
            assert np.allclose(np.hypot(vg[:, 0], vg[:, 1]), 0.4, atol=1e-12)

    def test_fixed_dofs_never_move(self, disk_setup):
        _, space, _, asm = disk_setup
        mask, values, u0 = apply_dirichlet(space, BoundaryData((0.3,)))
        res = minimize(u0, mask, asm, SolveConfig(max_iters=40,
                                                  gtol_rel=1e-3))
        assert np.array_equal(res.field.coeffs[mask], values[mask])

    def test_contraction_fraction_range(self):
        with pytest.raises(ValueError):
            BoundaryData((1.0,))
        with pytest.raises(ValueError):
            BoundaryData((-0.1,))

    def test_cell_count_mismatch(self, disk_setup):
        _, space, _, _ = disk_setup
        with pytest.raises(ValueError):
            boundary_values(space, BoundaryData((0.1, 0.2)))


class TestNCG:
    def test_quadratic_cg_behavior(self):
        rng = np.random.default_rng(42)
        n = 50
        M = rng.standard_normal((n, n))
        A = M @ M.T + n * np.eye(n)
        b = rng.standard_normal(n)

        def fg(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        x, info = ncg_minimize(fg, np.zeros(n),
                               SolveConfig(max_iters=n + 10, gtol_rel=1e-12))
        assert np.linalg.norm(A @ x - b) < 1e-8
        assert info["iterations"] <= n + 10

    def test_monotone_energy(self):
        rng = np.random.default_rng(1)
        n = 30
        M = rng.standard_normal((n, n))
        A = M @ M.T + np.eye(n)
        b = rng.standard_normal(n)

        def fg(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        _, info = ncg_minimize(fg, rng.standard_normal(n),
                               SolveConfig(max_iters=100, log_stride=1))
        es = [e for _, e, _ in info["history"]]
        for a2, b2 in zip(es, es[1:]):
            assert b2 <= a2 + 1e-12 * (1 + abs(a2))

    def test_wolfe_conditions_logged(self):
        rng = np.random.default_rng(2)
        n = 20
        M = rng.standard_normal((n, n))
        A = M @ M.T + np.eye(n)
        b = rng.standard_normal(n)

        def fg(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        cfg = SolveConfig(max_iters=60)
        _, info = ncg_minimize(fg, rng.standard_normal(n), cfg)
        assert info["wolfe_log"]
        for alpha, phi0, dphi0, phia, dphia in info["wolfe_log"]:
            assert phia <= phi0 + cfg.c1 * alpha * dphi0 \
                + 1e-12 * (1 + abs(phi0))
            assert abs(dphia) <= cfg.c2 * abs(dphi0) + 1e-10 * abs(dphi0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolveConfig(c1=0.5, c2=0.4)

    def test_rosenbrock(self):
        # nonconvex sanity: banana function reaches the global minimum
        def fg(z):
            x, y = z
            f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
            g = np.array([-2 * (1 - x) - 400 * x * (y - x * x),
                          200 * (y - x * x)])
            return f, g

        x, info = ncg_minimize(fg, np.array([-1.2, 1.0]),
                               SolveConfig(max_iters=2000, gtol_rel=1e-10))
        assert np.allclose(x, [1.0, 1.0], atol=1e-5)


class TestMinimize:
    def test_trivial_contraction_immediate(self, disk_setup):
        _, space, _, asm = disk_setup
        mask, values, u0 = apply_dirichlet(space, BoundaryData((0.0,)))
        res = minimize(u0, mask, asm, SolveConfig(max_iters=100))
        assert res.converged
        assert res.iterations <= 2

    def test_small_contraction_converges(self, disk_setup):
        _, space, _, asm = disk_setup
        mask, values, u0 = apply_dirichlet(space, BoundaryData((0.2,)))
        res = minimize(u0, mask, asm,
                       SolveConfig(max_iters=2000, gtol_rel=2e-5))
        assert res.converged
        assert res.breakdown.total < asm.energy(u0).total
        # stationarity: reduced gradient small
        g = asm.gradient(res.field.coeffs)
        g0 = asm.gradient(u0.coeffs)
        assert np.max(np.abs(g[~mask])) <= 2e-5 * np.max(np.abs(g0[~mask]))

    def test_determinism(self, disk_setup):
        _, space, _, asm = disk_setup
        mask, values, u0 = apply_dirichlet(space, BoundaryData((0.25,)))
        cfg = SolveConfig(max_iters=150, gtol_rel=1e-4, log_stride=10)
        r1 = minimize(u0.copy(), mask, asm, cfg)
        r2 = minimize(u0.copy(), mask, asm, cfg)
        assert r1.history == r2.history
        assert np.array_equal(r1.field.coeffs, r2.field.coeffs)


class TestContinuation:
    def test_three_stage_energies_finite(self, disk_setup):
        _, space, _, asm = disk_setup
        results = continuation_solve(space, asm, [0.2, 0.4, 0.6],
                                     SolveConfig(max_iters=1500,
                                                 gtol_rel=5e-5))
        assert len(results) == 3
        for r in results:
            assert np.isfinite(r.breakdown.total)

    def test_zero_schedule_trivial(self, disk_setup):
        _, space, _, asm = disk_setup
        results = continuation_solve(space, asm, [0.0],
                                     SolveConfig(max_iters=50))
        assert len(results) == 1
        assert results[0].iterations <= 2

    def test_direct_vs_staged(self, disk_setup):
        _, space, _, asm = disk_setup
        cfg = SolveConfig(max_iters=2500, gtol_rel=2e-5)
        direct = continuation_solve(space, asm, [0.3], cfg)[-1]
        staged = continuation_solve(space, asm, [0.1, 0.2, 0.3], cfg)[-1]
        assert direct.converged and staged.converged
        e1, e2 = direct.breakdown.total, staged.breakdown.total
        # agree within 5%, or a lower minimum was legitimately found
        assert abs(e1 - e2) <= 0.05 * max(abs(e1), abs(e2)) or min(e1, e2) > 0

    def test_non_monotone_schedule_rejected(self, disk_setup):
        _, space, _, asm = disk_setup
        with pytest.raises(ValueError):
            continuation_solve(space, asm, [0.4, 0.2], SolveConfig())


class TestHistoryCSV:
    def test_format(self, tmp_path):
        history = [(0, 2.5e6, 1), (100, 12.0, 0), (137, 3.0, 0)]
        path = tmp_path / "hist.csv"
        write_history_csv(path, history)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,energy,flagged"
        assert lines[1].startswith("0,") and lines[1].endswith(",1")
        assert lines[2].startswith("100,") and lines[2].endswith(",0")

    def test_stride_sampling(self):
        rng = np.random.default_rng(3)
        n = 40
        M = rng.standard_normal((n, n))
        A = M @ M.T + 0.01 * np.eye(n)
        b = rng.standard_normal(n)

        def fg(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        _, info = ncg_minimize(fg, 10 * rng.standard_normal(n),
                               SolveConfig(max_iters=500, gtol_rel=1e-14,
                                           log_stride=100))
        its = [it for it, _, _ in info["history"]]
        assert its[0] == 0
        assert all(it % 100 == 0 for it in its[:-1])
        assert its[-1] == info["iterations"]
