"""Residual a posteriori estimators for the iterative linearized P1 scheme.

Two splittings of the error bound are provided, each into a per-element
discretization indicator and a global linearization term:

* ``estimate_linear`` reconstructs the *linear* problem solved in the last
  step; its linearization term is the step size ||u+ - u||_X.
* ``estimate_nonlinear`` reconstructs the *nonlinear* problem through the
  discrete L2 Riesz representative psi_N of the residual F(u+), and bounds
  its dual norm with a discrete Laplace solve plus a Poisson indicator.

For P1 every flux is elementwise constant, so divergence terms vanish
and edge jumps are constants.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .schemes import SchemeConfig, flux, forcing_at_quad, residual
from .space import DEGREE5, FeFunction, FeSpace, h1_seminorm, integrate


@dataclass(frozen=True)
class EstimatorConstants:
    """Unknown analytic constants.

    With ``theory_factors=False`` (the default) the front factors of both
    bounds are set to one, as in the reference experiments; with ``True``
    they are ``beta C_I / (alpha m)``, ``(beta + 3M) / m`` and so on.
    """

    C_I: float = 1.0
    C_I_prime: float = 1.0
    C_Omega: float = 1.0
    theory_factors: bool = False


@dataclass
class EstimatorBreakdown:
    eta_sq: np.ndarray
    e_galerkin: float
    e_linear: float
    zeta_sq: Optional[np.ndarray] = None
    constants: EstimatorConstants = EstimatorConstants()
    alpha_beta: Optional[tuple] = None
    psi: Optional[FeFunction] = None
    xi: Optional[FeFunction] = None

    @property
    def total(self) -> float:
        return self.e_galerkin + self.e_linear


@dataclass
class FluxField:
    """Residual functional w -> -int q . grad w + int p w (q per element)."""

    q: np.ndarray
    p: np.ndarray  # forcing at the degree-5 quadrature points


def residual_flux(scheme: SchemeConfig, space: FeSpace, u_new: FeFunction, u_old: FeFunction,
                  problem, delta: Optional[float] = None) -> FluxField:
    """Flux of the linear residual of the step ``u_old -> u_new``.

    ``delta`` overrides ``scheme.delta``; Newton steps pass the accepted
    damping value.
    """
    if u_new.space is not space or u_old.space is not space:
        raise ValueError("u_new and u_old must live on the given space")
    g_old = u_old.gradients()
    q_old = np.einsum("fd,fd->f", g_old, g_old)
    mu_old = problem.mu(q_old)[:, None]
    dg = u_new.gradients() - g_old
    if scheme.kind == "zarantonello":
        d = scheme.delta if delta is None else delta
        q = dg / d + mu_old * g_old
    elif scheme.kind == "kacanov":
        q = mu_old * u_new.gradients()
    else:
        d = scheme.delta if delta is None else delta
        proj = np.einsum("fd,fd->f", g_old, dg)[:, None]
        q = (2.0 * problem.mu_prime(q_old)[:, None] * proj * g_old + mu_old * dg) / d + mu_old * g_old
    return FluxField(q, forcing_at_quad(space, problem))


def edge_normals(space: FeSpace) -> np.ndarray:
    """Unit normal per edge, rotated from the (low, high) vertex tangent."""
    mesh = space.mesh
    t = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    return np.stack([t[:, 1], -t[:, 0]], axis=1) / mesh.edge_lengths[:, None]


def jump_sq(space: FeSpace, q: np.ndarray) -> np.ndarray:
    """Per element: 1/2 h_K sum over interior edges of |e| [[q]]_e^2."""
    mesh = space.mesh
    ee = mesh.edge_elements
    inner = np.flatnonzero(ee[:, 1] >= 0)
    k1, k2 = ee[inner, 0], ee[inner, 1]
    j = np.einsum("ed,ed->e", q[k1] - q[k2], edge_normals(space)[inner])
    per_edge = mesh.edge_lengths[inner] * j * j
    acc = np.bincount(k1, weights=per_edge, minlength=mesh.n_elements)
    acc += np.bincount(k2, weights=per_edge, minlength=mesh.n_elements)
    return 0.5 * space.h * acc


def volume_sq(space: FeSpace, values) -> np.ndarray:
    """h_K^2 ||v||_K^2 from values at the degree-5 points."""
    return space.h**2 * integrate(space, np.asarray(values) ** 2, DEGREE5)


def estimate_linear(space: FeSpace, flux_field: FluxField, problem, u_new: FeFunction,
                    u_old: FeFunction, scheme: SchemeConfig,
                    consts: EstimatorConstants = EstimatorConstants()) -> EstimatorBreakdown:
    eta_sq = volume_sq(space, flux_field.p) + jump_sq(space, flux_field.q)
    alpha, beta = scheme.alpha_beta(problem)
    fg = fl = 1.0
    if consts.theory_factors:
        fg = beta * consts.C_I / (alpha * problem.m_mu)
        fl = (beta + problem.lipschitz) / problem.m_mu
    return EstimatorBreakdown(
        eta_sq=eta_sq,
        e_galerkin=fg * float(np.sqrt(eta_sq.sum())),
        e_linear=fl * h1_seminorm(u_new - u_old),
        constants=consts,
        alpha_beta=(alpha, beta),
    )


def riesz_lift(space: FeSpace, u: FeFunction, problem, method: str = "cg") -> FeFunction:
    """psi_N(u) in X_N with (psi_N, v)_L2 = <F(u), v> for all v in X_N."""
    M = linalg.assemble_mass(space)
    return FeFunction(space, linalg.solve_spd(M, residual(space, u, problem), method=method))


def _nonlinear_eta(space, u_new, psi, problem):
    vals = psi.at_quad(DEGREE5) + forcing_at_quad(space, problem)
    return volume_sq(space, vals) + jump_sq(space, flux(u_new, problem))


def estimate_nonlinear(space: FeSpace, u_new: FeFunction, problem,
                       consts: EstimatorConstants = EstimatorConstants(),
                       method: str = "cg") -> EstimatorBreakdown:
    psi = riesz_lift(space, u_new, problem, method)
    eta_sq = _nonlinear_eta(space, u_new, psi, problem)
    L = linalg.assemble_stiffness(space)
    rhs = linalg.assemble_mass(space) @ psi.coeffs
    xi = FeFunction(space, linalg.solve_spd(L, rhs, method=method))
    zeta_sq = volume_sq(space, psi.at_quad(DEGREE5)) + jump_sq(space, xi.gradients())
    fg, fl = (consts.C_I / problem.m_mu, 1.0 / problem.m_mu) if consts.theory_factors else (1.0, 1.0)
    e_lin = fl * float(np.sqrt(h1_seminorm(xi) ** 2 + consts.C_I_prime * zeta_sq.sum()))
    return EstimatorBreakdown(
        eta_sq=eta_sq,
        e_galerkin=fg * float(np.sqrt(eta_sq.sum())),
        e_linear=e_lin,
        zeta_sq=zeta_sq,
        constants=consts,
        psi=psi,
        xi=xi,
    )


def estimate_nonlinear_simple(space: FeSpace, u_new: FeFunction, problem,
                              consts: EstimatorConstants = EstimatorConstants(),
                              method: str = "cg") -> EstimatorBreakdown:
    """Same indicators, linearization term C_Omega ||psi_N||_L2 instead."""
    psi = riesz_lift(space, u_new, problem, method)
    eta_sq = _nonlinear_eta(space, u_new, psi, problem)
    M = linalg.assemble_mass(space)
    psi_l2 = float(np.sqrt(max(psi.coeffs @ (M @ psi.coeffs), 0.0)))
    fg, fl = (consts.C_I / problem.m_mu, 1.0 / problem.m_mu) if consts.theory_factors else (1.0, 1.0)
    return EstimatorBreakdown(
        eta_sq=eta_sq,
        e_galerkin=fg * float(np.sqrt(eta_sq.sum())),
        e_linear=fl * consts.C_Omega * psi_l2,
        constants=consts,
        psi=psi,
    )
