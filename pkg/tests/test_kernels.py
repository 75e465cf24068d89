"""The numba kernels and the pure-numpy fallbacks must agree."""

import numpy as np
import pytest

from tetherfem import _kernels as K
from tetherfem.energy import EnergyAssembler, EnergyParams
from tetherfem.space import Space

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA,
                                reason="numba not importable")


@pytest.fixture(scope="module")
def asm(one_cell_disk, one_cell_disk_edges):
    space = Space(one_cell_disk, 2)
    return EnergyAssembler(space, one_cell_disk_edges,
                           EnergyParams(epsilon=5e-3, alpha=10.0))


@pytest.fixture(scope="module")
def coeffs(asm):
    rng = np.random.default_rng(0)
    return rng.standard_normal(asm.space.n_dofs) * 0.1


def test_cell_kernel_agreement(asm, coeffs):
    args = (coeffs, asm.dofs, asm.cw, asm.cgrad, asm.chess)
    for pen in (0, 1, 2):
        a = K.cell_energy_grad_jit(*args, pen, 60.0, 0.21, 1.5, 2, True)
        b = K.cell_energy_grad_numpy(*args, pen, 60.0, 0.21, 1.5, 2, True)
        for x, y in zip(a[:3], b[:3]):
            assert x == pytest.approx(y, rel=1e-12)
        assert a[3] == b[3]
        for x, y in zip(a[4:], b[4:]):
            scale = max(1.0, np.abs(y).max())
            assert np.allclose(x, y, atol=1e-11 * scale)


def test_edge_kernel_agreement(asm, coeffs):
    ed = asm.edges
    args = (coeffs, asm.edofs, asm.ew, asm.egrad, asm.ehess,
            ed.i_normals, ed.i_lengths, 7.5, True)
    a = K.edge_energy_grad_jit(*args)
    b = K.edge_energy_grad_numpy(*args)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    assert a[1] == pytest.approx(b[1], rel=1e-12)
    assert np.allclose(a[2], b[2], atol=1e-11 * max(1.0, np.abs(b[2]).max()))


def test_lifting_kernel_agreement(asm, coeffs):
    ed = asm.edges
    nt = asm.space.mesh.n_triangles
    a = K.lifting_jit(coeffs, asm.edofs, asm.ew, asm.egrad, asm.elift,
                      ed.i_normals, ed.i_tris, asm.inv_mass_b, nt, asm.nlk)
    b = K.lifting_numpy(coeffs, asm.edofs, asm.ew, asm.egrad, asm.elift,
                        ed.i_normals, ed.i_tris, asm.inv_mass_b, nt, asm.nlk)
    assert np.allclose(a, b, atol=1e-12 * max(1.0, np.abs(b).max()))


def test_env_flag_selects_numpy(monkeypatch):
    # a fresh import with TETHERFEM_NUMBA=0 must bind the numpy paths
    import subprocess
    import sys

    code = ("import os; os.environ['TETHERFEM_NUMBA'] = '0'; "
            "from tetherfem import _kernels as K; "
            "assert K.cell_energy_grad is K.cell_energy_grad_numpy; "
            "assert not K.NUMBA_ENABLED; print('numpy fallback active')")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True)
    assert out.returncode == 0, out.stderr
    assert "numpy fallback active" in out.stdout
