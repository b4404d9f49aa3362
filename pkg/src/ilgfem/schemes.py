"""Iterative linearization steps for -div(mu(|grad u|^2) grad u) = g.

All three schemes solve one linear SPD system per step on the current
Galerkin space:

* Zarantonello: (grad u+, grad v) = (grad u, grad v) - delta <F(u), v>
* Kacanov: (mu(|grad u|^2) grad u+, grad v) = (g, v)
* damped Newton: F'(u) u+ = F'(u) u - delta(u) F(u), with delta(u) chosen
  by prediction/correction until the energy decreases sufficiently.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import linalg
from .space import DEGREE5, FeFunction, FeSpace, h1_seminorm, integrate

log = logging.getLogger(__name__)

KINDS = ("zarantonello", "kacanov", "newton")
MAX_CORRECTIONS = 64


class DampingError(RuntimeError):
    """The Newton correction loop exceeded its budget."""


@dataclass(frozen=True)
class DampingControl:
    kappa: float = 0.5
    epsilon: float = 1e-6
    delta0: float = 1.0
    delta_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta0 <= self.delta_max <= 1:
            raise ValueError("need 0 < delta0 <= delta_max <= 1")

    def floor(self, problem) -> float:
        """alpha_F' / (epsilon + L_F / 2); acceptance is guaranteed below it."""
        return min(problem.m_mu / (self.epsilon + 0.5 * problem.lipschitz), self.delta_max)

    @property
    def seed(self) -> tuple:
        return (self.delta0, self.delta0)

    def predict(self, history) -> float:
        older, last = history
        if older <= last:
            return min(last / self.kappa, self.delta_max)
        return last

    def correct(self, delta: float, floor: float) -> float:
        return max(floor, self.kappa * delta)


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    delta: float = 1.0
    damping: DampingControl = field(default_factory=DampingControl)
    solver: str = "cg"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; choose from {KINDS}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def alpha_beta(self, problem) -> tuple:
        """Coercivity and boundedness constants of the linearized form."""
        m, M = problem.m_mu, problem.M_mu
        if self.kind == "zarantonello":
            return 1.0 / self.delta, 1.0 / self.delta
        if self.kind == "kacanov":
            return m, M
        d = self.damping
        return m / d.delta_max, (2 * M - m) / d.floor(problem)

    def contraction(self, problem) -> float:
        """gamma = 1 - 2 delta nu + delta^2 L_F^2 (meaningful for Zarantonello)."""
        return 1 - 2 * self.delta * problem.nu + (self.delta * problem.lipschitz) ** 2


@dataclass(frozen=True)
class SchemeState:
    current: FeFunction
    previous: Optional[FeFunction] = None
    step_norm: float = float("inf")
    n: int = 0
    energy: float = float("nan")
    delta: Optional[float] = None
    delta_history: Optional[tuple] = None
    corrections: int = 0

    @classmethod
    def start(cls, u: FeFunction, problem=None, cfg: Optional[SchemeConfig] = None):
        history = cfg.damping.seed if cfg is not None and cfg.kind == "newton" else None
        e = energy(u.space, u, problem) if problem is not None else float("nan")
        return cls(u, energy=e, delta_history=history)

    def moved_to(self, u: FeFunction, problem) -> "SchemeState":
        """Same iteration history carried onto a new (prolongated) iterate."""
        return replace(self, current=u, previous=None, step_norm=float("inf"),
                       energy=energy(u.space, u, problem))


def forcing_load(space: FeSpace, problem) -> np.ndarray:
    return space.cached(("load", id(problem)), lambda: linalg.assemble_load(space, problem.forcing))


def forcing_at_quad(space: FeSpace, problem) -> np.ndarray:
    def build():
        xy = space.quad_points(DEGREE5)
        return problem.forcing(xy[..., 0], xy[..., 1])
    return space.cached(("g@qp", id(problem)), build)


def flux(u: FeFunction, problem) -> np.ndarray:
    """mu(|grad u|^2) grad u per element."""
    g = u.gradients()
    return problem.mu(np.einsum("fd,fd->f", g, g))[:, None] * g


def residual(space: FeSpace, u: FeFunction, problem) -> np.ndarray:
    """<F(u), phi_i> for every free dof."""
    return linalg.assemble_flux_load(space, flux(u, problem)) - forcing_load(space, problem)


def energy(space: FeSpace, u: FeFunction, problem) -> float:
    """H(u) = int psi(|grad u|^2) - <g, u>."""
    return float(np.sum(energy_density(space, u, problem)) - forcing_load(space, problem) @ u.coeffs)


def energy_density(space, u, problem):
    g = u.gradients()
    return space.area * problem.psi(np.einsum("fd,fd->f", g, g))


def energy_drop(space: FeSpace, old: FeFunction, new: FeFunction, problem) -> float:
    """H(old) - H(new), summed elementwise to limit cancellation."""
    dens = energy_density(space, old, problem) - energy_density(space, new, problem)
    return float(np.sum(dens) - forcing_load(space, problem) @ (old.coeffs - new.coeffs))


def _advance(state: SchemeState, coeffs, problem, **extra) -> SchemeState:
    u_old = state.current
    u_new = FeFunction(u_old.space, coeffs)
    return replace(
        state,
        current=u_new,
        previous=u_old,
        step_norm=h1_seminorm(u_new - u_old),
        n=state.n + 1,
        energy=energy(u_old.space, u_new, problem),
        **extra,
    )


def zarantonello_step(space, state: SchemeState, cfg: SchemeConfig, problem) -> SchemeState:
    if cfg.kind != "zarantonello":
        raise ValueError("configuration is not a Zarantonello scheme")
    L = linalg.assemble_stiffness(space)
    u = state.current
    rhs = L @ u.coeffs - cfg.delta * residual(space, u, problem)
    x = linalg.solve_spd(L, rhs, x0=u.coeffs, method=cfg.solver)
    return _advance(state, x, problem)


def kacanov_step(space, state: SchemeState, cfg: SchemeConfig, problem) -> SchemeState:
    if cfg.kind != "kacanov":
        raise ValueError("configuration is not a Kacanov scheme")
    u = state.current
    g = u.gradients()
    A = linalg.assemble_weighted_stiffness(space, problem.mu(np.einsum("fd,fd->f", g, g)))
    x = linalg.solve_spd(A, forcing_load(space, problem), x0=u.coeffs, method=cfg.solver)
    return _advance(state, x, problem)


def newton_step(space, state: SchemeState, cfg: SchemeConfig, problem):
    """Damped Newton step; returns ``(state, accepted delta, corrections)``.

    The system delta^{-1} F'(u) u+ = delta^{-1} F'(u) u - F(u) is linear in
    delta, so u+ = u + delta * d with the undamped direction d; one solve
    serves every trial damping value.
    """
    if cfg.kind != "newton":
        raise ValueError("configuration is not a Newton scheme")
    ctl = cfg.damping
    u = state.current
    history = state.delta_history or ctl.seed
    J = linalg.assemble_newton_matrix(space, u, problem)
    d = linalg.solve_spd(J, -residual(space, u, problem), method=cfg.solver)
    floor = ctl.floor(problem)
    delta = ctl.predict(history)
    for i in range(MAX_CORRECTIONS + 1):
        cand = FeFunction(space, u.coeffs + delta * d)
        step_sq = h1_seminorm(cand - u) ** 2
        drop = energy_drop(space, u, cand, problem)
        if drop >= ctl.epsilon * step_sq:
            break
        if delta <= floor:
            # guaranteed by theory at the floor; only round-off can fail here
            log.debug("accepting floor damping %.3g with drop %.3g", delta, drop)
            break
        delta = ctl.correct(delta, floor)
    else:
        raise DampingError("damping correction budget exceeded")
    new = _advance(state, cand.coeffs, problem, delta=delta,
                   delta_history=(history[1], delta), corrections=i)
    return new, delta, i


def step(space, state: SchemeState, cfg: SchemeConfig, problem) -> SchemeState:
    if cfg.kind == "zarantonello":
        return zarantonello_step(space, state, cfg, problem)
    if cfg.kind == "kacanov":
        return kacanov_step(space, state, cfg, problem)
    return newton_step(space, state, cfg, problem)[0]


def admissible_delta_interval(kind: str, problem) -> tuple:
    """Damping range covered by the convergence theory (advisory only)."""
    m, M = problem.m_mu, problem.M_mu
    if kind == "zarantonello":
        return 0.0, 2 * m / (9 * M**2)
    if kind == "newton":
        return 0.0, 2 * m / (3 * M)
    if kind == "kacanov":
        return 0.0, float("inf")
    raise ValueError(f"unknown scheme {kind!r}")
