"""Sparse assembly on the free dofs and an SPD solver."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .space import DEGREE5, FeFunction, FeSpace, QuadratureRule

SOLVER_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


def _assemble(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Scatter (F, 3, 3) element blocks into a matrix on the free dofs."""
    dofs = space.element_dofs
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    vals = local.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    n = space.ndofs
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _scatter(space: FeSpace, local: np.ndarray) -> np.ndarray:
    """Scatter (F, 3) element vectors onto the free dofs."""
    dofs = space.element_dofs.ravel()
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=local.ravel()[keep], minlength=space.ndofs)


def stiffness_blocks(space: FeSpace) -> np.ndarray:
    g = space.grads
    return space.area[:, None, None] * np.einsum("fid,fjd->fij", g, g)


def assemble_weighted_stiffness(space: FeSpace, weight) -> sp.csr_matrix:
    """sum_K w_K int_K grad phi_i . grad phi_j for positive elementwise w."""
    w = np.broadcast_to(np.asarray(weight, dtype=float), (space.mesh.n_elements,))
    if np.any(~(w > 0)):
        raise ValueError("stiffness weights must be positive")
    return _assemble(space, w[:, None, None] * stiffness_blocks(space))


def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    return space.cached(("stiffness",), lambda: assemble_weighted_stiffness(space, 1.0))


def newton_blocks(space: FeSpace, u: FeFunction, problem) -> np.ndarray:
    gu = u.gradients()
    q = np.einsum("fd,fd->f", gu, gu)
    proj = np.einsum("fd,fid->fi", gu, space.grads)
    rank1 = 2.0 * problem.mu_prime(q)[:, None, None] * proj[:, :, None] * proj[:, None, :]
    return space.area[:, None, None] * rank1 + problem.mu(q)[:, None, None] * stiffness_blocks(space)


def assemble_newton_matrix(space: FeSpace, u: FeFunction, problem, delta: float = 1.0) -> sp.csr_matrix:
    """delta^{-1} F'(u) on P1, exact since every factor is constant per element."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    A = _assemble(space, newton_blocks(space, u, problem) / delta)
    if A.shape[0] and np.any(A.diagonal() <= 0):
        raise SolverError("Newton matrix is not positive definite; check mu' bounds")
    return A


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    def build():
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return _assemble(space, space.area[:, None, None] * local[None])
    return space.cached(("mass",), build)


def assemble_load(space: FeSpace, f, rule: QuadratureRule = DEGREE5) -> np.ndarray:
    """int f phi_i by quadrature; ``f`` is a callable or values at the points."""
    if callable(f):
        xy = space.quad_points(rule)
        vals = np.broadcast_to(np.asarray(f(xy[..., 0], xy[..., 1]), dtype=float), xy.shape[:2])
    else:
        vals = np.asarray(f, dtype=float)
    local = space.area[:, None] * ((vals * rule.weights) @ rule.points)
    return _scatter(space, local)


def assemble_flux_load(space: FeSpace, flux) -> np.ndarray:
    """sum_K |K| flux_K . grad phi_i for elementwise constant fluxes (F, 2)."""
    local = space.area[:, None] * np.einsum("fd,fid->fi", np.asarray(flux, dtype=float), space.grads)
    return _scatter(space, local)


def pcg(A, b, x0=None, rtol=SOLVER_RTOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops once ||b - A x|| <= rtol ||b||.  Returns ``(x, iterations)``.
    """
    n = len(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("nonpositive diagonal entry; matrix is not SPD")
    inv_diag = 1.0 / diag
    maxiter = 20 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    target = rtol * bnorm
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("nonpositive curvature in CG; matrix is not SPD")
        step = rz / pAp
        x += step * p
        r -= step * Ap
        if np.linalg.norm(r) <= target:
            # guard against drift of the recursive residual
            if np.linalg.norm(b - A @ x) <= target:
                return x, it
            r = b - A @ x
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations")


def solve_spd(A, b, x0=None, method: str = "cg") -> np.ndarray:
    """Solve A x = b for SPD ``A``; ``method`` is ``"cg"`` or ``"direct"``."""
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0)
    if method == "direct":
        if not np.any(b):
            return np.zeros_like(b)
        x = spla.spsolve(sp.csc_matrix(A), b)
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve produced non-finite values")
        return x
    if method != "cg":
        raise ValueError(f"unknown solver method {method!r}")
    return pcg(A, b, x0=x0)[0]
