import numpy as np
import pytest

from ilgfem import linalg
from ilgfem.estimators import (
    EstimatorConstants, estimate_linear, estimate_nonlinear, estimate_nonlinear_simple,
    jump_sq, residual_flux, riesz_lift,
)
from ilgfem.mesh import Mesh, bisect, make_lshape_initial
from ilgfem.problems import ProblemSpec, constant_mu, make_experiment
from ilgfem.schemes import SchemeConfig, SchemeState, flux, forcing_load, step
from ilgfem.space import DEGREE5, FeFunction, FeSpace, h1_seminorm

from conftest import discrete_solution

SMOOTH = make_experiment("smooth")


def zero_forcing(problem):
    return ProblemSpec("unforced", problem.mu, problem.mu_prime, problem.psi, problem.m_mu,
                       problem.M_mu, None, lambda x, y: 0.0 * x)


def oracle_jump(mesh, q):
    """Edge jumps by comparing vertex pairs of every element pair."""
    F = mesh.n_elements
    out = np.zeros(F)
    V = mesh.vertices
    diam = [max(np.linalg.norm(V[a] - V[b]) for a in t for b in t) for t in mesh.elements]
    for k1 in range(F):
        for k2 in range(k1 + 1, F):
            shared = set(mesh.elements[k1].tolist()) & set(mesh.elements[k2].tolist())
            if len(shared) != 2:
                continue
            a, b = sorted(shared)
            (c,) = set(mesh.elements[k1].tolist()) - shared
            t = V[b] - V[a]
            n = np.array([-t[1], t[0]]) / np.linalg.norm(t)
            if n @ (V[c] - V[a]) > 0:
                n = -n  # outward from k1
            j = (q[k1] - q[k2]) @ n
            L = np.linalg.norm(t)
            out[k1] += 0.5 * diam[k1] * L * j * j
            out[k2] += 0.5 * diam[k2] * L * j * j
    return out


def oracle_volume(mesh, values_fn):
    out = np.zeros(mesh.n_elements)
    for k, tri in enumerate(mesh.elements):
        p = mesh.vertices[tri]
        e1, e2 = p[1] - p[0], p[2] - p[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        h = max(np.linalg.norm(p[i] - p[j]) for i in range(3) for j in range(3))
        xy = DEGREE5.points @ p
        out[k] = h * h * area * np.sum(DEGREE5.weights * values_fn(k, xy) ** 2)
    return out


@pytest.fixture(scope="module", params=[1, 2])
def small(request):
    m = make_lshape_initial(1) if request.param == 1 else bisect(make_lshape_initial(0), [0, 3, 7])
    assert m.n_elements <= 48
    return m


def test_linear_indicator_oracle(small):
    space = FeSpace(small)
    rng = np.random.default_rng(0)
    u_old = FeFunction(space, rng.standard_normal(space.ndofs))
    u_new = FeFunction(space, rng.standard_normal(space.ndofs))
    for kind in ("zarantonello", "kacanov", "newton"):
        cfg = SchemeConfig(kind, delta=0.6)
        fl = residual_flux(cfg, space, u_new, u_old, SMOOTH)
        br = estimate_linear(space, fl, SMOOTH, u_new, u_old, cfg)
        ref = oracle_jump(small, fl.q) + oracle_volume(small, lambda k, xy: SMOOTH.forcing(xy[:, 0], xy[:, 1]))
        assert np.abs(br.eta_sq - ref).max() < 1e-12 * max(1, ref.max())
        assert abs(br.e_galerkin**2 - br.eta_sq.sum()) <= 1e-12 * br.eta_sq.sum()
        assert br.e_linear == h1_seminorm(u_new - u_old)


def test_nonlinear_indicator_oracle(small):
    space = FeSpace(small)
    rng = np.random.default_rng(1)
    u = FeFunction(space, rng.standard_normal(space.ndofs))
    br = estimate_nonlinear(space, u, SMOOTH)
    psi = br.psi.at_quad(DEGREE5)
    g = SMOOTH.forcing(*np.moveaxis(space.quad_points(DEGREE5), -1, 0))
    ref = oracle_jump(small, flux(u, SMOOTH)) + oracle_volume(small, lambda k, xy: psi[k] + g[k])
    assert np.abs(br.eta_sq - ref).max() < 1e-12 * max(1, ref.max())
    zeta = oracle_jump(small, br.xi.gradients()) + oracle_volume(small, lambda k, xy: psi[k])
    assert np.abs(br.zeta_sq - zeta).max() < 1e-12 * max(1, zeta.max())
    assert abs(br.e_linear - np.sqrt(h1_seminorm(br.xi) ** 2 + zeta.sum())) < 1e-12


def test_edge_accounting(space192):
    mesh = space192.mesh
    q = np.random.default_rng(2).standard_normal((mesh.n_elements, 2))
    per_el = jump_sq(space192, q)
    ee = mesh.edge_elements
    inner = ee[:, 1] >= 0
    k1, k2 = ee[inner, 0], ee[inner, 1]
    t = mesh.vertices[mesh.edges[inner, 1]] - mesh.vertices[mesh.edges[inner, 0]]
    n = np.stack([-t[:, 1], t[:, 0]], axis=1) / np.linalg.norm(t, axis=1)[:, None]
    j = np.einsum("ed,ed->e", q[k1] - q[k2], n)
    h = mesh.diameters
    total = np.sum(0.5 * (h[k1] + h[k2]) * mesh.edge_lengths[inner] * j * j)
    assert abs(per_el.sum() - total) < 1e-12 * total


def test_single_edge_example():
    m = Mesh(np.array([(0, 0), (1, 0), (1, 1), (0, 1)], float), np.array([[0, 2, 3], [2, 0, 1]]))
    sp = FeSpace(m)
    q = np.array([[1.0, 0.0], [0.0, 0.0]])
    # shared edge is the diagonal with normal (1, -1)/sqrt 2: j = 1/sqrt 2
    hK = np.sqrt(2)
    assert np.allclose(jump_sq(sp, q), 0.5 * hK * np.sqrt(2) * 0.5)


def test_zero_data_gives_zero_indicators(space192):
    p = zero_forcing(SMOOTH)
    z = space192.zero()
    for kind in ("zarantonello", "kacanov", "newton"):
        cfg = SchemeConfig(kind)
        br = estimate_linear(space192, residual_flux(cfg, space192, z, z, p), p, z, z, cfg)
        assert not br.eta_sq.any() and br.e_linear == 0


def test_converged_fluxes_coincide(space192):
    rng = np.random.default_rng(3)
    u = FeFunction(space192, rng.standard_normal(81))
    ref = flux(u, SMOOTH)
    for kind in ("zarantonello", "kacanov", "newton"):
        q = residual_flux(SchemeConfig(kind, delta=0.4), space192, u, u, SMOOTH).q
        assert np.allclose(q, ref, atol=1e-14)
    c = constant_mu(1.0)
    v = FeFunction(space192, rng.standard_normal(81))
    q = residual_flux(SchemeConfig("kacanov"), space192, v, u, c).q
    assert np.allclose(q, v.gradients(), atol=1e-14)
    with pytest.raises(ValueError):
        residual_flux(SchemeConfig("kacanov"), FeSpace(space192.mesh), v, u, c)


@pytest.mark.parametrize("kind", ["zarantonello", "kacanov", "newton"])
@pytest.mark.parametrize("which", ["smooth", "singular_increasing"])
def test_galerkin_orthogonality(space192, kind, which):
    p = make_experiment(which)
    cfg = SchemeConfig(kind, delta=0.5)
    st0 = SchemeState.start(space192.interpolate(lambda x, y: 0.3 * np.cos(x + y)), p, cfg)
    st1 = step(space192, st0, cfg, p)
    fl = residual_flux(cfg, space192, st1.current, st1.previous, p, delta=st1.delta)
    r = linalg.assemble_flux_load(space192, fl.q) - forcing_load(space192, p)
    assert np.abs(r).max() < 1e-8 * np.abs(forcing_load(space192, p)).max()


@pytest.mark.parametrize("which", ["smooth", "singular"])
def test_zero_residual_collapse(space192, which):
    p = make_experiment(which)
    u = discrete_solution(space192, p, tol=1e-13)
    psi = riesz_lift(space192, u, p, method="direct")
    assert np.abs(psi.coeffs).max() < 1e-8
    for est in (estimate_nonlinear, estimate_nonlinear_simple):
        assert est(space192, u, p, method="direct").e_linear < 1e-8
    cfg = SchemeConfig("kacanov")
    br = estimate_linear(space192, residual_flux(cfg, space192, u, u, p), p, u, u, cfg)
    assert br.e_linear == 0


def test_poisson_reduction(space192):
    c = constant_mu(1.0)
    u = discrete_solution(space192, c)
    br = estimate_nonlinear(space192, u, c, method="direct")
    xy = space192.quad_points(DEGREE5)
    g = c.forcing(xy[..., 0], xy[..., 1])
    h = space192.h
    vol = h * h * space192.area * ((g * g) @ DEGREE5.weights)
    classic = vol + jump_sq(space192, u.gradients())
    assert np.allclose(br.eta_sq, classic, rtol=1e-8, atol=1e-12)


def test_riesz_lift_shrinks_along_iterations(space192):
    cfg = SchemeConfig("kacanov")
    st_ = SchemeState.start(space192.zero(), SMOOTH, cfg)
    M = linalg.assemble_mass(space192)
    norms, lin, simple = [], [], []
    for _ in range(15):
        st_ = step(space192, st_, cfg, SMOOTH)
        psi = riesz_lift(space192, st_.current, SMOOTH)
        norms.append(np.sqrt(psi.coeffs @ (M @ psi.coeffs)))
        lin.append(estimate_nonlinear(space192, st_.current, SMOOTH).e_linear)
        simple.append(estimate_nonlinear_simple(space192, st_.current, SMOOTH).e_linear)
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-3 * norms[0]
    assert all(s >= l for s, l in zip(simple, lin))


def test_theory_factors(space192):
    rng = np.random.default_rng(4)
    u0 = FeFunction(space192, rng.standard_normal(81))
    u1 = FeFunction(space192, rng.standard_normal(81))
    cfg = SchemeConfig("kacanov")
    fl = residual_flux(cfg, space192, u1, u0, SMOOTH)
    one = estimate_linear(space192, fl, SMOOTH, u1, u0, cfg)
    th = estimate_linear(space192, fl, SMOOTH, u1, u0, cfg, EstimatorConstants(C_I=2.0, theory_factors=True))
    m, M = SMOOTH.m_mu, SMOOTH.M_mu
    assert np.isclose(th.e_galerkin, M * 2.0 / (m * m) * one.e_galerkin)
    assert np.isclose(th.e_linear, (M + 3 * M) / m * one.e_linear)
    nl = estimate_nonlinear(space192, u1, SMOOTH)
    nt = estimate_nonlinear(space192, u1, SMOOTH, EstimatorConstants(theory_factors=True))
    assert np.isclose(nt.e_galerkin, nl.e_galerkin / m) and np.isclose(nt.e_linear, nl.e_linear / m)
    s1 = estimate_nonlinear_simple(space192, u1, SMOOTH, EstimatorConstants(C_Omega=3.0))
    s0 = estimate_nonlinear_simple(space192, u1, SMOOTH)
    assert np.isclose(s1.e_linear, 3 * s0.e_linear)
