import numpy as np
import pytest

from tetherfem.geometry import Cell, DomainSpec, Mesh, build_edges, generate_mesh


@pytest.fixture(scope="session")
def two_tri_mesh():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    tags = np.ones(4, dtype=np.int32)
    return Mesh(verts, tris, tags)


@pytest.fixture(scope="session")
def one_tri_mesh():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]], dtype=np.int32)
    return Mesh(verts, tris, np.ones(3, dtype=np.int32))


@pytest.fixture(scope="session")
def one_cell_disk():
    spec = DomainSpec(shape="disk", radius=3.0,
                      cells=(Cell(center=(0.0, 0.0), radius=1.0),), h=0.5)
    return generate_mesh(spec)


@pytest.fixture(scope="session")
def one_cell_disk_edges(one_cell_disk):
    return build_edges(one_cell_disk)


@pytest.fixture(scope="session")
def unit_square_mesh():
    return generate_mesh(DomainSpec(shape="rectangle", width=1.0, height=1.0,
                                    h=0.25))
