"""Spectral condition numbers of preconditioned systems, and a PCG solver.

For SPD A and G the product GA is self-adjoint in the A-inner product, so a
single Lanczos recurrence in that inner product delivers both ends of its
(real, positive) spectrum.  Full reorthogonalization keeps the desk-scale
recurrences clean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .errors import InnerProductBreakdown, NotConverged

__all__ = ["SpectralResult", "lanczos_condition", "pcg_solve"]


def _as_operator(op):
    if callable(op):
        return op
    mat = np.asarray(op, float)
    return lambda x: mat @ x


@dataclass
class SpectralResult:
    lambda_min: float
    lambda_max: float
    kappa: float
    iterations: int
    converged: bool


def lanczos_condition(apply_A, apply_G, n, tol: float = 1e-6, maxit: int = 400,
                      seed: int = 0) -> SpectralResult:
    """Extreme eigenvalues of G A for SPD A, G.

    Runs the Lanczos recurrence on G A in the A-inner product with full
    reorthogonalization; stops when both extreme Ritz values change by less
    than ``tol`` relatively (or the space is exhausted at dimension n).
    A non-converged run is returned flagged, not raised.
    """
    apply_A = _as_operator(apply_A)
    apply_G = _as_operator(apply_G)
    rng = np.random.default_rng(seed)

    Q = np.zeros((n, min(maxit, n)))
    W = np.zeros_like(Q)  # W[:, i] = A Q[:, i]
    alphas: list[float] = []
    betas: list[float] = []

    def a_normalize(r):
        """A-orthogonalize r against the basis (twice) and A-normalize."""
        k = len(alphas)
        for _ in range(2):
            if k:
                r = r - Q[:, :k] @ (W[:, :k].T @ r)
        w = apply_A(r)
        nrm2 = float(r @ w)
        if nrm2 < 0.0:
            raise InnerProductBreakdown("operator A is not positive definite")
        nrm = np.sqrt(nrm2)
        return r, w, nrm

    r = rng.standard_normal(n)
    r, w, nrm = a_normalize(r)
    q, w = r / nrm, w / nrm

    theta_min = theta_max = None
    converged = False
    kmax = min(maxit, n)
    for k in range(kmax):
        Q[:, k], W[:, k] = q, w
        v = apply_G(w)  # (G A) q
        alpha = float(v @ w)
        alphas.append(alpha)
        r = v - alpha * q
        if k > 0:
            r = r - betas[-1] * Q[:, k - 1]
        r, w_next, beta = a_normalize(r)

        if k >= 1:
            theta = eigvalsh_tridiagonal(np.array(alphas), np.array(betas))
            t_min, t_max = float(theta[0]), float(theta[-1])
            if theta_min is not None:
                dmin = abs(t_min - theta_min) / max(abs(t_min), 1e-300)
                dmax = abs(t_max - theta_max) / max(abs(t_max), 1e-300)
                if dmin < tol and dmax < tol:
                    theta_min, theta_max = t_min, t_max
                    converged = True
                    break
            theta_min, theta_max = t_min, t_max

        if k + 1 == kmax:
            break
        scale = np.sqrt(abs(alpha)) if alpha else 1.0
        if beta <= 1e-14 * scale:
            # invariant subspace found; continue from a fresh direction
            r = rng.standard_normal(n)
            r, w_next, beta2 = a_normalize(r)
            if beta2 <= 0.0:
                break
            betas.append(0.0)
            q, w = r / beta2, w_next / beta2
        else:
            betas.append(beta)
            q, w = r / beta, w_next / beta

    iterations = len(alphas)
    if theta_min is None:  # n == 1
        theta_min = theta_max = alphas[0]
        converged = True
    if iterations >= n:
        converged = True  # Krylov space exhausted: spectrum is exact
    return SpectralResult(
        lambda_min=theta_min,
        lambda_max=theta_max,
        kappa=theta_max / theta_min,
        iterations=iterations,
        converged=converged,
    )


def pcg_solve(apply_A, apply_G, rhs, tol: float = 1e-8, maxit: int = 1000):
    """Preconditioned conjugate gradients to a relative residual tolerance.

    Returns (solution, iteration count); raises NotConverged with the
    partial iterate attached when the budget runs out.
    """
    apply_A = _as_operator(apply_A)
    apply_G = _as_operator(apply_G)
    rhs = np.asarray(rhs, float)
    x = np.zeros_like(rhs)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return x, 0
    r = rhs.copy()
    z = apply_G(r)
    p = z.copy()
    rho = float(r @ z)
    for it in range(1, maxit + 1):
        w = apply_A(p)
        alpha = rho / float(p @ w)
        x += alpha * p
        r -= alpha * w
        if np.linalg.norm(r) <= tol * rhs_norm:
            return x, it
        z = apply_G(r)
        rho_new = float(r @ z)
        p = z + (rho_new / rho) * p
        rho = rho_new
    raise NotConverged(f"pcg did not reach {tol} in {maxit} iterations", result=x)
