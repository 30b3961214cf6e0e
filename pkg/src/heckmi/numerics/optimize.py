import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt

from .linalg import nearest_psd

logger = logging.getLogger(__name__)


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    hessian: np.ndarray
    inv_hessian: np.ndarray
    converged: bool
    n_iter: int
    message: str = ""

    @property
    def neg_hessian_inverse(self):
        # Minimising a negated log-likelihood: this is the inverse observed
        # information of the likelihood.
        return self.inv_hessian


def fd_step(x):
    return np.maximum(1e-5, 1e-5 * np.abs(x))


def fd_gradient(fun, x, step=None):
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else np.broadcast_to(step, x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h[i])
    return g


def fd_hessian(fun, x, grad=None):
    """Central finite-difference Hessian.

    Differentiates ``grad`` when given (one pair of gradient calls per
    coordinate), otherwise uses second differences of ``fun``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    h = fd_step(x)
    H = np.empty((d, d))
    if grad is not None:
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            H[:, i] = (grad(x + e) - grad(x - e)) / (2.0 * h[i])
    else:
        f0 = fun(x)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h[i]
            H[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / h[i] ** 2
            for j in range(i):
                ej = np.zeros(d)
                ej[j] = h[j]
                H[i, j] = H[j, i] = (
                    fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
                ) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def _guard(fun):
    def wrapped(x):
        with np.errstate(all="ignore"):
            v = fun(x)
        return v if np.isfinite(v) else np.inf

    return wrapped


def invert_hessian(H):
    """Inverse of a Hessian, repaired to be PSD when it is not."""
    vals = np.linalg.eigvalsh(H)
    if vals.min() > 0:
        inv = np.linalg.inv(H)
        inv = 0.5 * (inv + inv.T)
        if np.linalg.eigvalsh(inv).min() >= 0:
            return inv
    logger.warning("Hessian not positive definite (min eigenvalue %.3g); projecting inverse", vals.min())
    inv = np.linalg.pinv(0.5 * (H + H.T), hermitian=True)
    return nearest_psd(0.5 * (inv + inv.T))


def minimize(fun, x0, grad=None, max_iter=500, gtol=1e-6, hessian=True, polish=3):
    """Quasi-Newton minimisation with a finite-difference Hessian at the end.

    Parameters
    ----------
    fun : callable
        Objective ``f(x) -> float``. Non-finite values are treated as +inf
        so the line search backs off.
    x0 : array_like
        Starting point; ``fun(x0)`` must be finite.
    grad : callable, optional
        Analytic gradient. Central differences are used when omitted.
    max_iter : int
        BFGS iteration cap.
    gtol : float
        Convergence requires ``max|grad| <= gtol * max(1, |f|)``.
    hessian : bool
        Compute the Hessian and its inverse at the solution.
    polish : int
        Maximum number of safeguarded Newton steps after BFGS.

    Returns
    -------
    MinimizeResult
    """
    x0 = np.asarray(x0, dtype=float).copy()
    f = _guard(fun)
    if not np.isfinite(f(x0)):
        raise ValueError("objective is not finite at the starting point")
    if grad is None:
        g = lambda x: fd_gradient(f, x)  # noqa: E731
    else:
        g = grad
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = sopt.minimize(
            f, x0, jac=g, method="BFGS", options={"maxiter": max_iter, "gtol": gtol * 1e-2}
        )
    x = res.x
    fx = f(x)
    gx = g(x)
    n_iter = int(res.nit)
    H = None

    def _ok(fx, gx):
        return np.all(np.isfinite(gx)) and np.max(np.abs(gx)) <= gtol * max(1.0, abs(fx))

    for _ in range(polish):
        if _ok(fx, gx):
            break
        H = fd_hessian(f, x, grad=g if grad is not None else None)
        try:
            if np.linalg.eigvalsh(H).min() <= 0:
                break
            step = np.linalg.solve(H, gx)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        improved = False
        while t > 1e-4:
            xn = x - t * step
            fn = f(xn)
            if fn <= fx:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x, fx = xn, fn
        gx = g(x)
        H = None
    converged = bool(_ok(fx, gx)) and n_iter < max_iter
    if hessian:
        if H is None:
            H = fd_hessian(f, x, grad=g if grad is not None else None)
        inv = invert_hessian(H)
    else:
        H = inv = np.full((x.size, x.size), np.nan)
    return MinimizeResult(
        x=x, fun=float(fx), grad=np.asarray(gx), hessian=H, inv_hessian=inv,
        converged=converged, n_iter=n_iter, message=str(res.message),
    )
