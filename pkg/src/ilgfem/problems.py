"""Benchmark problems on the L-shaped domain.

Each experiment fixes a diffusion law ``mu`` and a manufactured exact
solution; the forcing is obtained by applying the operator
``-div(mu(|grad u|^2) grad u)`` to the closed-form solution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

EXPERIMENTS = ("smooth", "singular", "singular_increasing")


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """Closed-form solution; ``hessian`` returns (u_xx, u_xy, u_yy)."""

    value: Callable
    gradient: Callable
    hessian: Callable


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    mu: Callable
    mu_prime: Callable
    psi: Callable
    m_mu: float
    M_mu: float
    exact: Optional[ExactSolution] = None
    forcing: Optional[Callable] = None

    @property
    def nu(self) -> float:
        """Strong monotonicity constant of the operator."""
        return self.m_mu

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant L_F of the operator."""
        return 3.0 * self.M_mu


def forcing_at(spec: ProblemSpec, x, y):
    """g = -2 mu'(q) (H grad u) . grad u - mu(q) lap u, with q = |grad u|^2."""
    if spec.exact is None:
        raise ValueError(f"problem {spec.name!r} has no exact solution")
    ux, uy = spec.exact.gradient(x, y)
    uxx, uxy, uyy = spec.exact.hessian(x, y)
    q = ux * ux + uy * uy
    hgg = uxx * ux * ux + 2.0 * uxy * ux * uy + uyy * uy * uy
    return -2.0 * spec.mu_prime(q) * hgg - spec.mu(q) * (uxx + uyy)


def _with_forcing(spec: ProblemSpec) -> ProblemSpec:
    return ProblemSpec(
        spec.name, spec.mu, spec.mu_prime, spec.psi, spec.m_mu, spec.M_mu,
        spec.exact, lambda x, y: forcing_at(spec, x, y),
    )


def smooth_exact() -> ExactSolution:
    pi = np.pi

    def value(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def gradient(x, y):
        return (pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y))

    def hessian(x, y):
        s = np.sin(pi * x) * np.sin(pi * y)
        return (-pi**2 * s, pi**2 * np.cos(pi * x) * np.cos(pi * y), -pi**2 * s)

    return ExactSolution(value, gradient, hessian)


def _polar(x, y):
    r = np.hypot(x, y)
    phi = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    return r, phi


def _product(a, b):
    """Value, gradient and Hessian of a*b from those of the factors."""
    (va, ga, Ha), (vb, gb, Hb) = a, b
    v = va * vb
    g = (va * gb[0] + vb * ga[0], va * gb[1] + vb * ga[1])
    H = (
        va * Hb[0] + vb * Ha[0] + 2 * ga[0] * gb[0],
        va * Hb[1] + vb * Ha[1] + ga[0] * gb[1] + ga[1] * gb[0],
        va * Hb[2] + vb * Ha[2] + 2 * ga[1] * gb[1],
    )
    return v, g, H


def _singular_parts(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r, phi = _polar(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        # s = Im z^{2/3} on the branch phi in [0, 2 pi)
        r13 = np.cbrt(r)
        s = r13 * r13 * np.sin(2 * phi / 3)
        sx = -(2 / 3) / r13 * np.sin(phi / 3)
        sy = (2 / 3) / r13 * np.cos(phi / 3)
        r43 = r * r13
        sxx = (2 / 9) / r43 * np.sin(4 * phi / 3)
        sxy = -(2 / 9) / r43 * np.cos(4 * phi / 3)
        # c = cos(phi) = x / r
        r3, r5 = r**3, r**5
        c = x / r
        cx, cy = y * y / r3, -x * y / r3
        cxx = -3 * x * y * y / r5
        cxy = y * (2 * x * x - y * y) / r5
        cyy = x * (2 * y * y - x * x) / r5
    px, py = 1 - x * x, 1 - y * y
    P = (px * py, (-2 * x * py, -2 * y * px), (-2 * py, 4 * x * y, -2 * px))
    S = (s, (sx, sy), (sxx, sxy, -sxx))
    C = (c, (cx, cy), (cxx, cxy, cyy))
    return _product(_product(S, C), P)


def singular_exact() -> ExactSolution:
    """r^{2/3} sin(2 phi/3) (1-x^2)(1-y^2) cos(phi), phi measured in [0, 3pi/2]."""

    def value(x, y):
        v = _singular_parts(x, y)[0]
        return np.where(np.hypot(x, y) == 0, 0.0, v)

    def gradient(x, y):
        return _singular_parts(x, y)[1]

    def hessian(x, y):
        return _singular_parts(x, y)[2]

    return ExactSolution(value, gradient, hessian)


def make_experiment(which: str) -> ProblemSpec:
    which = which.replace("-", "_")
    if which == "smooth":
        spec = ProblemSpec(
            "smooth",
            mu=lambda t: 1.0 / (t + 1.0) + 0.5,
            mu_prime=lambda t: -1.0 / (t + 1.0) ** 2,
            psi=lambda s: 0.5 * (np.log1p(s) + 0.5 * s),
            m_mu=3 / 8,
            M_mu=3 / 2,
            exact=smooth_exact(),
        )
    elif which == "singular":
        # d/dt[mu(t^2) t] = 1 + (1 - 2s) e^{-s}, s = t^2: min at s = 3/2, max at s = 0
        spec = ProblemSpec(
            "singular",
            mu=lambda t: 1.0 + np.exp(-t),
            mu_prime=lambda t: -np.exp(-t),
            psi=lambda s: 0.5 * (s - np.expm1(-s)),
            m_mu=1.0 - 2.0 * np.exp(-1.5),
            M_mu=2.0,
            exact=singular_exact(),
        )
    elif which == "singular_increasing":
        # d/dt[mu(t^2) t] = 2 + (2s - 1) e^{-s}: min at s = 0, max at s = 3/2
        spec = ProblemSpec(
            "singular_increasing",
            mu=lambda t: 2.0 - np.exp(-t),
            mu_prime=lambda t: np.exp(-t),
            psi=lambda s: 0.5 * (2.0 * s + np.expm1(-s)),
            m_mu=1.0,
            M_mu=2.0 + 2.0 * np.exp(-1.5),
            exact=singular_exact(),
        )
    else:
        raise ValueError(f"unknown experiment {which!r}; choose from {EXPERIMENTS}")
    return _with_forcing(spec)


def constant_mu(c: float = 1.0, exact: Optional[ExactSolution] = None) -> ProblemSpec:
    """Linear test problem -c lap u = g (defaults to the smooth exact solution)."""
    spec = ProblemSpec(
        f"constant{c:g}",
        mu=lambda t: c + 0.0 * np.asarray(t, dtype=float),
        mu_prime=lambda t: 0.0 * np.asarray(t, dtype=float),
        psi=lambda s: 0.5 * c * np.asarray(s, dtype=float),
        m_mu=c,
        M_mu=c,
        exact=exact if exact is not None else smooth_exact(),
    )
    return _with_forcing(spec)
