"""Jacobi-preconditioned conjugate gradients and the nodal FEM solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, ConvergenceError
from .assembly import FemProblem, assemble_stiffness, interior_mask


@dataclass
class GridField:
    """Nodal values on an N x N grid of the unit square; ``values[i, j]`` at (x=j/(N-1), y=i/(N-1))."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ContractError(f"grid field must be square, got {self.values.shape}")

    @property
    def N(self) -> int:
        return self.values.shape[0]


def solve_cg(K, b, tol: float = 1e-10, maxiter: int | None = None, callback=None) -> np.ndarray:
    """Solve the SPD system ``K x = b`` by CG with diagonal preconditioning.

    Stops once sqrt(r.M^-1 r) / sqrt(b.M^-1 b) <= tol. ``callback(x, res)``
    receives the iterate and that relative preconditioned residual after every
    iteration, and once for the initial guess. The residual is not monotone in
    general; the K-norm of the error is.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    diag = K.diagonal()
    if (diag <= 0).any():
        raise ContractError("matrix diagonal must be positive (SPD)")
    inv_d = 1.0 / diag

    x = np.zeros(n)
    r = b.copy()
    z = inv_d * r
    rz = r @ z
    ref = np.sqrt(rz)
    if ref == 0.0:
        if callback is not None:
            callback(x, 0.0)
        return x
    if callback is not None:
        callback(x, 1.0)
    p = z.copy()
    for it in range(1, maxiter + 1):
        Kp = K @ p
        alpha = rz / (p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        z = inv_d * r
        rz_new = r @ z
        res = np.sqrt(max(rz_new, 0.0)) / ref
        if callback is not None:
            callback(x, res)
        if res <= tol:
            return x
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})",
                           residual=res, iterations=maxiter)


def fem_solve(problem: FemProblem, tol: float = 1e-10) -> GridField:
    """Nodal Q1 solution; boundary nodes are exactly zero."""
    K, b = assemble_stiffness(problem)
    u = np.zeros((problem.H + 1) ** 2)
    u[interior_mask(problem.H)] = solve_cg(K, b, tol=tol)
    return GridField(u.reshape(problem.H + 1, problem.H + 1))
