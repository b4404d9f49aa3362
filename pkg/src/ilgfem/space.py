"""P1 finite elements with homogeneous Dirichlet conditions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle.

    Weights sum to one, so ``sum(w * f) * area`` integrates over an element.
    """

    name: str
    points: np.ndarray  # (Q, 3) barycentric coordinates
    weights: np.ndarray  # (Q,)
    degree: int


def _radon7() -> QuadratureRule:
    s = np.sqrt(15.0)
    a1, a2 = (6 - s) / 21, (6 + s) / 21
    w1, w2 = (155 - s) / 1200, (155 + s) / 1200
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9 / 40]
    for a, w in [(a1, w1), (a2, w2)]:
        b = 1 - 2 * a
        pts += [(a, a, b), (a, b, a), (b, a, a)]
        wts += [w, w, w]
    return QuadratureRule("radon7", np.array(pts), np.array(wts), 5)


def collapsed_gauss(n: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule mapped onto the triangle.

    The Duffy Jacobian costs one degree in t, so the rule is exact to 2n-2.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    # Duffy map (s, t) -> (l1, l2) = (s (1 - t), t), Jacobian (1 - t)
    l1 = (s * (1 - t)).ravel()
    l2 = t.ravel()
    weights = (ws * wt * (1 - t)).ravel() * 2.0
    pts = np.stack([1 - l1 - l2, l1, l2], axis=1)
    return QuadratureRule(f"gauss{n}", pts, weights, 2 * n - 2)


DEGREE5 = _radon7()
DEGREE8 = collapsed_gauss(5)


class FeSpace:
    """P1 space on a mesh; free dofs are the interior vertices."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.free = np.flatnonzero(~mesh.boundary_vertices)
        dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        dof[self.free] = np.arange(len(self.free))
        self.dof_of_vertex = dof
        self._cache = {}

    def __repr__(self):
        return f"FeSpace(dofs={self.ndofs}, elements={self.mesh.n_elements})"

    @property
    def ndofs(self) -> int:
        return len(self.free)

    @cached_property
    def area(self) -> np.ndarray:
        return self.mesh.signed_areas

    @cached_property
    def h(self) -> np.ndarray:
        return self.mesh.diameters

    @cached_property
    def grads(self) -> np.ndarray:
        """Shape-function gradients, shape (F, 3, 2)."""
        p = self.mesh.vertices[self.mesh.elements]
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        return g / (2.0 * self.area)[:, None, None]

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Free-dof index of each element vertex, -1 on the boundary."""
        return self.dof_of_vertex[self.mesh.elements]

    def quad_points(self, rule: QuadratureRule = DEGREE5) -> np.ndarray:
        """Physical quadrature points, shape (F, Q, 2)."""
        key = ("qp", rule.name)
        if key not in self._cache:
            p = self.mesh.vertices[self.mesh.elements]
            self._cache[key] = np.einsum("qi,fid->fqd", rule.points, p)
        return self._cache[key]

    def cached(self, key, factory):
        """Memoise data derived from this space (loads, exact values...)."""
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]

    def zero(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.ndofs))

    def function(self, coeffs) -> "FeFunction":
        return FeFunction(self, coeffs)

    def interpolate(self, f) -> "FeFunction":
        """Nodal interpolant of ``f(x, y)`` (boundary values discarded)."""
        xy = self.mesh.vertices[self.free]
        return FeFunction(self, np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(self.ndofs))


class FeFunction:
    """Coefficient vector over the free dofs of a space."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: FeSpace, coeffs):
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != (space.ndofs,):
            raise ValueError(f"expected {space.ndofs} coefficients, got shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        coeffs.flags.writeable = False
        self.space = space
        self.coeffs = coeffs

    def __add__(self, other):
        _same_space(self, other)
        return FeFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_space(self, other)
        return FeFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return FeFunction(self.space, float(c) * self.coeffs)

    __rmul__ = __mul__

    def nodal(self) -> np.ndarray:
        """Values at all mesh vertices (zero on the boundary)."""
        v = np.zeros(self.space.mesh.n_vertices)
        v[self.space.free] = self.coeffs
        return v

    def element_values(self) -> np.ndarray:
        return self.nodal()[self.space.mesh.elements]

    def gradients(self) -> np.ndarray:
        """Elementwise constant gradients, shape (F, 2)."""
        return np.einsum("fi,fid->fd", self.element_values(), self.space.grads)

    def at_quad(self, rule: QuadratureRule = DEGREE5) -> np.ndarray:
        """Values at the quadrature points, shape (F, Q)."""
        return self.element_values() @ rule.points.T


def _same_space(f, g):
    if f.space is not g.space:
        raise ValueError("functions live on different spaces")


def gradient_on_element(f: FeFunction, k: int) -> np.ndarray:
    vals = f.nodal()[f.space.mesh.elements[k]]
    return vals @ f.space.grads[k]


def h1_seminorm(f: FeFunction) -> float:
    g = f.gradients()
    return float(np.sqrt(np.sum(f.space.area * np.einsum("fd,fd->f", g, g))))


def integrate(space: FeSpace, values, rule: QuadratureRule = DEGREE5) -> np.ndarray:
    """Per-element integrals from values at the quadrature points (F, Q)."""
    return space.area * (np.asarray(values) @ rule.weights)


def integrate_l2_element(space: FeSpace, k: int, f, rule: QuadratureRule = DEGREE5) -> float:
    """Integral of ``f(x, y)`` over element ``k``."""
    p = space.mesh.vertices[space.mesh.elements[k]]
    xy = rule.points @ p
    vals = np.broadcast_to(np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float), rule.weights.shape)
    return float(space.area[k] * (vals @ rule.weights))


def l2_norm(f: FeFunction, rule: QuadratureRule = DEGREE5) -> float:
    return float(np.sqrt(integrate(f.space, f.at_quad(rule) ** 2, rule).sum()))


def error_h1(f: FeFunction, exact_grad, rule: QuadratureRule = DEGREE5) -> float:
    """Broken H1-seminorm distance between ``f`` and a gradient field."""
    xy = f.space.quad_points(rule)
    gx, gy = exact_grad(xy[..., 0], xy[..., 1])
    g = f.gradients()
    d2 = (gx - g[:, 0:1]) ** 2 + (gy - g[:, 1:2]) ** 2
    return float(np.sqrt(integrate(f.space, d2, rule).sum()))


def prolongate(f: FeFunction, fine: FeSpace) -> FeFunction:
    """Exact P1 inclusion of ``f`` into a space on a midpoint refinement."""
    coarse, mesh = f.space.mesh, fine.mesh
    nc = mesh.n_coarse_vertices
    if mesh.parents is None or nc != coarse.n_vertices or not np.array_equal(
        mesh.vertices[:nc], coarse.vertices
    ):
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    values = np.empty(mesh.n_vertices)
    values[:nc] = f.nodal()
    values[nc:] = 0.5 * (values[mesh.parents[:, 0]] + values[mesh.parents[:, 1]])
    return FeFunction(fine, values[fine.free])
