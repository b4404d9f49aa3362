import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilgfem import linalg
from ilgfem.problems import constant_mu, make_experiment
from ilgfem.schemes import (
    DampingControl, DampingError, SchemeConfig, SchemeState, admissible_delta_interval,
    energy, energy_drop, forcing_load, kacanov_step, newton_step, residual, step,
    zarantonello_step,
)
from ilgfem.space import DEGREE5, DEGREE8, FeFunction, FeSpace, h1_seminorm, integrate

from conftest import discrete_solution

SMOOTH = make_experiment("smooth")
POISSON = constant_mu(1.0)


def poisson_solution(space, c=1.0):
    L = linalg.assemble_stiffness(space)
    return FeFunction(space, linalg.solve_spd(L, forcing_load(space, POISSON) / c, method="direct"))


def run(space, cfg, problem, n, u0=None):
    st_ = SchemeState.start(space.zero() if u0 is None else u0, problem, cfg)
    out = [st_]
    for _ in range(n):
        out.append(step(space, out[-1], cfg, problem))
    return out


def test_energy_examples(space192):
    assert energy(space192, space192.zero(), SMOOTH) == 0.0
    u = space192.interpolate(lambda x, y: np.sin(x + 2 * y))
    direct = 0.5 * h1_seminorm(u) ** 2 - forcing_load(space192, POISSON) @ u.coeffs
    assert abs(energy(space192, u, POISSON) - direct) < 1e-13


@pytest.fixture(scope="module")
def space_fine():
    from ilgfem.mesh import make_lshape_initial

    return FeSpace(make_lshape_initial(6))


@pytest.mark.parametrize("which", ["smooth", "singular", "singular_increasing"])
def test_energy_identity_independent_quadrature(space_fine, which):
    p = make_experiment(which)
    # zero on the corner patch, where the singular forcing defeats any rule
    u = space_fine.interpolate(lambda x, y: p.exact.value(x, y) * (np.hypot(x, y) > 0.25))
    g = u.gradients()
    xy = space_fine.quad_points(DEGREE8)
    gu = p.forcing(xy[..., 0], xy[..., 1]) * u.at_quad(DEGREE8)
    ref = np.sum(space_fine.area * p.psi(np.einsum("fd,fd->f", g, g))) - integrate(space_fine, gu, DEGREE8).sum()
    assert abs(energy(space_fine, u, p) - ref) <= 1e-8 * abs(ref)


def test_zarantonello_linear_reduction(space192):
    exact = poisson_solution(space192)
    u0 = space192.interpolate(lambda x, y: np.cos(3 * x) * y)
    st1 = zarantonello_step(space192, SchemeState.start(u0, POISSON), SchemeConfig("zarantonello", 1.0), POISSON)
    assert h1_seminorm(st1.current - exact) < 1e-8
    states = run(space192, SchemeConfig("zarantonello", 0.5), POISSON, 6, u0)
    norms = [s.step_norm for s in states[1:]]
    assert np.allclose(np.array(norms[1:]) / norms[:-1], 0.5, atol=1e-8)


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_kacanov_linear_reduction(space192, c):
    p = constant_mu(c)
    states = run(space192, SchemeConfig("kacanov"), p, 1)
    L = linalg.assemble_stiffness(space192)
    ref = linalg.solve_spd(c * L, forcing_load(space192, p), method="direct")
    assert h1_seminorm(states[1].current - FeFunction(space192, ref)) < 1e-8


def test_newton_linear_reduction(space192):
    cfg = SchemeConfig("newton")
    new, delta, corr = newton_step(space192, SchemeState.start(space192.zero(), POISSON, cfg), cfg, POISSON)
    assert (delta, corr) == (1.0, 0)
    assert h1_seminorm(new.current - poisson_solution(space192)) < 1e-8


def test_newton_first_smooth_step_needs_no_correction(space192):
    cfg = SchemeConfig("newton")
    _, delta, corr = newton_step(space192, SchemeState.start(space192.zero(), SMOOTH, cfg), cfg, SMOOTH)
    assert (delta, corr) == (1.0, 0)


@pytest.mark.parametrize("kind", ["zarantonello", "kacanov", "newton"])
@pytest.mark.parametrize("which", ["smooth", "singular_increasing"])
def test_fixed_point_preserved(space192, kind, which):
    p = make_experiment(which)
    u = discrete_solution(space192, p, tol=1e-13)
    assert np.abs(residual(space192, u, p)).max() < 1e-9
    cfg = SchemeConfig(kind, delta=0.3)
    out = step(space192, SchemeState.start(u, p, cfg), cfg, p)
    assert h1_seminorm(out.current - u) < 1e-8


def test_schemes_agree_in_linear_regime(space192):
    p = constant_mu(1.7)
    sols = [discrete_solution(space192, p, tol=1e-12, kind=k) for k in ("kacanov", "newton")]
    z = run(space192, SchemeConfig("zarantonello", 1 / 1.7), p, 3)[-1].current
    L = linalg.assemble_stiffness(space192)
    ref = FeFunction(space192, linalg.solve_spd(1.7 * L, forcing_load(space192, p), method="direct"))
    for u in sols + [z]:
        assert h1_seminorm(u - ref) < 1e-8


def test_kacanov_energy_decrease(space192):
    for which in ("smooth", "singular"):
        p = make_experiment(which)
        cfg = SchemeConfig("kacanov")
        alpha = cfg.alpha_beta(p)[0]
        states = run(space192, cfg, p, 8)
        for a, b in zip(states, states[1:]):
            gap = energy_drop(space192, a.current, b.current, p)
            assert gap >= 0.5 * alpha * b.step_norm**2 - 1e-8


def test_newton_acceptance_holds_every_step(space192):
    for which in ("smooth", "singular", "singular_increasing"):
        p = make_experiment(which)
        cfg = SchemeConfig("newton")
        st_ = SchemeState.start(space192.zero(), p, cfg)
        for _ in range(6):
            new, delta, _ = newton_step(space192, st_, cfg, p)
            drop = energy_drop(space192, st_.current, new.current, p)
            assert drop >= cfg.damping.epsilon * new.step_norm**2
            assert new.delta == delta and new.delta_history[1] == delta
            st_ = new


def test_damping_arithmetic():
    ctl = DampingControl(kappa=0.5)
    seq = [1.0]
    for _ in range(3):
        seq.append(ctl.correct(seq[-1], 0.3))
    assert seq == [1.0, 0.5, 0.3, 0.3]
    assert ctl.predict((1.0, 1.0)) == 1.0
    assert ctl.predict((0.25, 0.5)) == 1.0
    assert ctl.predict((0.2, 0.4)) == 0.8
    assert ctl.predict((0.5, 0.25)) == 0.25
    assert ctl.seed == (1.0, 1.0)
    assert SMOOTH.m_mu / (ctl.epsilon + SMOOTH.lipschitz / 2) == ctl.floor(SMOOTH)
    with pytest.raises(ValueError):
        DampingControl(kappa=1.0)
    with pytest.raises(ValueError):
        DampingControl(epsilon=0.0)


def test_newton_correction_sequence_and_budget(space192):
    # a large epsilon forces several corrections from delta = 1
    ctl = DampingControl(kappa=0.5, epsilon=1e3)
    cfg = SchemeConfig("newton", damping=ctl)
    st0 = SchemeState.start(space192.zero(), SMOOTH, cfg)
    new, delta, corr = newton_step(space192, st0, cfg, SMOOTH)
    floor = ctl.floor(SMOOTH)
    assert corr > 0
    assert delta == max(floor, 0.5**corr)
    drop = energy_drop(space192, st0.current, new.current, SMOOTH)
    assert drop >= ctl.epsilon * new.step_norm**2 or delta == floor
    # the previous trial was rejected
    d = (new.current.coeffs - st0.current.coeffs) / delta
    prev = FeFunction(space192, 2 * delta * d)
    assert energy_drop(space192, st0.current, prev, SMOOTH) < ctl.epsilon * h1_seminorm(prev) ** 2
    # the prediction after this step stays at delta (history went down)
    assert new.delta_history == (1.0, delta)
    assert ctl.predict(new.delta_history) == delta
    bad = SchemeConfig("newton", damping=DampingControl(epsilon=1e30))
    with pytest.raises(DampingError):
        newton_step(space192, SchemeState.start(space192.zero(), SMOOTH, bad), bad, SMOOTH)


def test_alpha_beta_and_intervals():
    z = SchemeConfig("zarantonello", delta=0.5)
    assert z.alpha_beta(SMOOTH) == (2.0, 2.0)
    assert SchemeConfig("kacanov").alpha_beta(SMOOTH) == (3 / 8, 3 / 2)
    n = SchemeConfig("newton")
    assert n.alpha_beta(SMOOTH) == (3 / 8, 2.625 / n.damping.floor(SMOOTH))
    lo, hi = admissible_delta_interval("zarantonello", SMOOTH)
    assert lo == 0 and abs(hi - 1 / 27) < 1e-15
    assert abs(admissible_delta_interval("newton", SMOOTH)[1] - 1 / 6) < 1e-15
    assert admissible_delta_interval("kacanov", SMOOTH) == (0.0, float("inf"))
    with pytest.raises(ValueError):
        admissible_delta_interval("picard", SMOOTH)
    with pytest.raises(ValueError):
        SchemeConfig("picard")
    with pytest.raises(ValueError):
        SchemeConfig("zarantonello", delta=0.0)
    with pytest.raises(ValueError):
        zarantonello_step(None, None, SchemeConfig("kacanov"), SMOOTH)
    with pytest.raises(ValueError):
        kacanov_step(None, None, SchemeConfig("newton"), SMOOTH)
    with pytest.raises(ValueError):
        newton_step(None, None, SchemeConfig("kacanov"), SMOOTH)


def test_state_step_norm_consistent(space192):
    states = run(space192, SchemeConfig("kacanov"), SMOOTH, 3)
    for s in states[1:]:
        assert abs(s.step_norm - h1_seminorm(s.current - s.previous)) < 1e-14
        assert s.energy == energy(space192, s.current, SMOOTH)
    assert [s.n for s in states] == [0, 1, 2, 3]


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.95), st.sampled_from(["smooth", "singular", "singular_increasing"]))
def test_zarantonello_contraction(frac, which):
    from ilgfem.mesh import make_lshape_initial

    p = make_experiment(which)
    space = FeSpace(make_lshape_initial(2))
    delta = frac * admissible_delta_interval("zarantonello", p)[1]
    cfg = SchemeConfig("zarantonello", delta=delta)
    gamma = cfg.contraction(p)
    states = run(space, cfg, p, 6)
    for a, b in zip(states[1:], states[2:]):
        assert b.step_norm**2 / a.step_norm**2 <= gamma + 1e-8
