from __future__ import annotations

import numpy as np

from .errors import SolverError


def conjugate_gradient(A, b, x0=None, tol=1e-10, max_iter=None, diag=None):
    """Jacobi-preconditioned conjugate gradient for a symmetric positive definite A.

    Stops once ||b - A x|| <= tol * ||b||. Raises SolverError carrying the
    last residual norm if `max_iter` passes first.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    target = tol * bnorm
    inv_diag = None if diag is None else 1.0 / np.asarray(diag, dtype=np.float64)

    r = b - A @ x
    z = r if inv_diag is None else inv_diag * r
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > target:
        if it >= max_iter:
            raise SolverError(f"conjugate gradient did not converge in {max_iter} iterations", rnorm / bnorm)
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        z = r if inv_diag is None else inv_diag * r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
        rnorm = np.linalg.norm(r)
        it += 1
    return x
