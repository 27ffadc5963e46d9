"""Dense BFGS with Armijo backtracking.

The inverse-Hessian approximation is seeded (and re-seeded after a failed
line search) from an exact Hessian when the caller can provide one, which
makes quadratic functionals converge in a single step regardless of how
badly the fine-grid discretization is conditioned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    n_evals: int


def pd_inverse(hess: np.ndarray) -> np.ndarray:
    """Inverse of ``hess`` after the smallest diagonal shift making it positive definite."""
    n = hess.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    hess = 0.5 * (hess + hess.T)
    scale = max(float(np.max(np.abs(np.diag(hess)))), 1e-300)
    shift = 0.0
    eye = np.eye(n)
    for _ in range(40):
        try:
            chol = np.linalg.cholesky(hess + shift * eye)
            break
        except np.linalg.LinAlgError:
            shift = 1e-12 * scale if shift == 0.0 else shift * 10.0
    else:
        return eye / scale
    if shift:
        log.debug("hessian shifted by %.3g to restore definiteness", shift)
    linv = np.linalg.inv(chol)
    return linv.T @ linv


def minimize_bfgs(
    fun_grad: Callable[[np.ndarray], tuple],
    x0: np.ndarray,
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol_g: float = 1e-8,
    max_iter: int = 200,
    c1: float = 1e-4,
    max_backtracks: int = 60,
) -> OptimizeResult:
    """Minimize a smooth function until ``max|grad| < tol_g``.

    ``fun_grad(x)`` returns ``(f, grad)``. ``hess(x)``, if given, returns the
    exact Hessian used to (re)initialize the inverse approximation.
    Non-convergence is reported, never raised.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    n_evals = 1

    def fresh_inverse(at):
        if hess is not None:
            return pd_inverse(hess(at))
        return np.eye(x.size)

    if x.size == 0:
        return OptimizeResult(x, f, g, 0, True, "no decision variables", n_evals)

    inv_h = fresh_inverse(x)
    fresh = True
    it = 0
    message = "iteration cap reached"
    while True:
        gmax = float(np.max(np.abs(g)))
        if gmax < tol_g:
            message = "gradient below tolerance"
            break
        if it >= max_iter:
            break
        p = -inv_h @ g
        slope = float(g @ p)
        if slope >= 0.0:
            inv_h = fresh_inverse(x)
            fresh = True
            p = -inv_h @ g
            slope = float(g @ p)
            if slope >= 0.0:
                message = "no descent direction"
                break
        t = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + t * p
            try:
                f_new, g_new = fun_grad(x_new)
            except (ValueError, FloatingPointError):
                t *= 0.5
                continue
            n_evals += 1
            if not np.isfinite(f_new):
                t *= 0.5
                continue
            if f_new <= f + c1 * t * slope:
                accepted = True
                break
            # below round-off in f, fall back on gradient decrease
            if abs(f_new - f) <= 1e-12 * max(1.0, abs(f)) and np.max(np.abs(g_new)) < gmax:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if fresh:
                message = "line search failed"
                break
            inv_h = fresh_inverse(x)
            fresh = True
            continue
        s = x_new - x
        yv = g_new - g
        x, f, g = x_new, f_new, g_new
        it += 1
        sy = float(s @ yv)
        if sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            rho = 1.0 / sy
            hy = inv_h @ yv
            inv_h = (
                inv_h
                - rho * (np.outer(s, hy) + np.outer(hy, s))
                + (rho * rho * float(yv @ hy) + rho) * np.outer(s, s)
            )
            fresh = False
    converged = message == "gradient below tolerance"
    return OptimizeResult(x, float(f), g, it, converged, message, n_evals)
