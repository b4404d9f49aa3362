"""Adaptive interplay of linearization steps and mesh refinement."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import estimators
from .estimators import EstimatorConstants
from .mesh import Mesh, bisect, make_lshape_initial
from .schemes import SchemeConfig, SchemeState, newton_step, step
from .space import FeSpace, error_h1, h1_seminorm, prolongate

log = logging.getLogger(__name__)


class LinearizationStalled(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptConfig:
    scheme: SchemeConfig
    estimator: str = "linear"
    vartheta: float = 2.0
    theta_doerfler: float = 0.5
    max_elements: int = 100_000
    max_steps_per_mesh: int = 100
    initial_refinements: int = 2
    constants: EstimatorConstants = EstimatorConstants()

    def __post_init__(self):
        if not self.vartheta > 0:
            raise ValueError("vartheta must be positive")
        if not 0 < self.theta_doerfler <= 1:
            raise ValueError("theta_doerfler must lie in (0, 1]")
        if self.estimator not in ("linear", "nonlinear", "nonlinear_simple"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass
class LevelRecord:
    level: int
    elements: int
    dofs: int
    steps: int
    total_steps: int
    error_h1: Optional[float]
    e_galerkin: float
    e_linear: float
    energy: float
    step_norm: float
    sigma: float
    newton_deltas: List[float] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def e_total(self) -> float:
        return self.e_galerkin + self.e_linear

    @property
    def effectivity(self) -> Optional[float]:
        if self.error_h1 is None or self.error_h1 == 0:
            return None
        return self.e_total / self.error_h1


@dataclass
class AdaptRunRecord:
    problem: str
    scheme: str
    estimator: str
    levels: List[LevelRecord] = field(default_factory=list)
    u01_norm: float = float("nan")

    def __len__(self):
        return len(self.levels)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(lv, name) for lv in self.levels], dtype=float)


def sigma(level: int, u01_norm: float) -> float:
    """Linearization tolerance (N + 1)^{-1/2} ||u_0^1||_X on space number N."""
    if level < 0 or u01_norm < 0:
        raise ValueError("level and u01_norm must be nonnegative")
    return u01_norm / np.sqrt(level + 1.0)


def doerfler_mark(eta_sq, theta: float) -> np.ndarray:
    """Smallest set carrying a theta share of sum(eta_sq); ties favour low ids."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta_sq = np.asarray(eta_sq, dtype=float)
    order = np.argsort(-eta_sq, kind="stable")
    csum = np.cumsum(eta_sq[order])
    if csum.size == 0 or csum[-1] <= 0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(csum, theta * csum[-1], side="left"))
    return np.sort(order[: k + 1])


def estimate(cfg: AdaptConfig, space, state: SchemeState, problem):
    u_new, u_old = state.current, state.previous
    if cfg.estimator == "linear":
        fl = estimators.residual_flux(cfg.scheme, space, u_new, u_old, problem, delta=state.delta)
        return estimators.estimate_linear(space, fl, problem, u_new, u_old, cfg.scheme, cfg.constants)
    if cfg.estimator == "nonlinear":
        return estimators.estimate_nonlinear(space, u_new, problem, cfg.constants, cfg.scheme.solver)
    return estimators.estimate_nonlinear_simple(space, u_new, problem, cfg.constants, cfg.scheme.solver)


def run_adaptive(problem, config: AdaptConfig, mesh: Optional[Mesh] = None, callback=None) -> AdaptRunRecord:
    """Iterate on each mesh until the linearization error is dominated, then refine.

    On every mesh at least one step is taken; stepping continues while
    ``E_Galerkin <= vartheta * E_Linear`` or the step exceeds ``sigma(N)``.
    ``callback(level_record, space, state, breakdown)`` is invoked before
    each refinement.
    """
    mesh = make_lshape_initial(config.initial_refinements) if mesh is None else mesh
    space = FeSpace(mesh)
    state = SchemeState.start(space.zero(), problem, config.scheme)
    exact_grad = problem.exact.gradient if problem.exact is not None else None
    record = AdaptRunRecord(problem.name, config.scheme.kind, config.estimator)
    total = 0
    level = 0
    while True:
        t0 = time.perf_counter()
        deltas = []
        steps = 0
        while True:
            if config.scheme.kind == "newton":
                state, delta, _ = newton_step(space, state, config.scheme, problem)
                deltas.append(delta)
            else:
                state = step(space, state, config.scheme, problem)
            steps += 1
            total += 1
            if level == 0 and steps == 1:
                record.u01_norm = h1_seminorm(state.current)
            br = estimate(config, space, state, problem)
            sig = sigma(level, record.u01_norm)
            log.info(
                "level %d n %d elements %d step %.3e E_gal %.3e E_lin %.3e delta %s",
                level, steps, mesh.n_elements, state.step_norm, br.e_galerkin, br.e_linear,
                "-" if state.delta is None else f"{state.delta:.3g}",
            )
            if br.e_galerkin > config.vartheta * br.e_linear and state.step_norm <= sig:
                break
            if steps >= config.max_steps_per_mesh:
                raise LinearizationStalled(f"no convergence in {steps} steps on level {level}")
        err = error_h1(state.current, exact_grad) if exact_grad is not None else None
        lv = LevelRecord(
            level=level, elements=mesh.n_elements, dofs=space.ndofs, steps=steps, total_steps=total,
            error_h1=err, e_galerkin=br.e_galerkin, e_linear=br.e_linear, energy=state.energy,
            step_norm=state.step_norm, sigma=sig, newton_deltas=deltas,
            wall_time=time.perf_counter() - t0,
        )
        record.levels.append(lv)
        if callback is not None:
            callback(lv, space, state, br)
        if mesh.n_elements > config.max_elements:
            return record
        marked = doerfler_mark(br.eta_sq, config.theta_doerfler)
        if marked.size == 0:
            log.info("all indicators vanish; stopping at level %d", level)
            return record
        mesh = bisect(mesh, marked)
        space = FeSpace(mesh)
        state = state.moved_to(prolongate(state.current, space), problem)
        level += 1
