import numpy as np
import pytest

from ilgfem.mesh import Mesh, from_triangles, make_lshape_initial
from ilgfem.space import FeSpace


@pytest.fixture(scope="session")
def mesh192():
    return make_lshape_initial(2)


@pytest.fixture(scope="session")
def mesh48():
    return make_lshape_initial(1)


@pytest.fixture
def space192(mesh192):
    return FeSpace(mesh192)


def unit_square_mesh(n=4):
    """Structured mesh of [0,1]^2 split along one diagonal."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = lambda i, j: i * (n + 1) + j
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    return from_triangles(vertices, tris)


def all_free_space(mesh):
    """Space on ``mesh`` with every vertex treated as a free dof."""
    sp = FeSpace(mesh)
    sp.free = np.arange(mesh.n_vertices)
    sp.dof_of_vertex = np.arange(mesh.n_vertices)
    return sp


def discrete_solution(space, problem, tol=1e-12, kind="kacanov"):
    """Fixed point of the Kacanov iteration with a direct solver."""
    from ilgfem.schemes import SchemeConfig, SchemeState, step

    cfg = SchemeConfig(kind, solver="direct")
    st = SchemeState.start(space.zero(), problem, cfg)
    for _ in range(200):
        st = step(space, st, cfg, problem)
        if st.step_norm < tol:
            return st.current
    raise AssertionError("no convergence")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
