"""Cluster-level Heckman selection models fitted by full-information ML.

Parameters live on the unconstrained scale ``[beta_o, beta_s, log_sigma,
atanh_rho]`` (``log_sigma`` is dropped for a binary outcome). The same
layout with no selection block describes the MAR comparator fits, where
the outcome model is a plain normal regression or probit.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sc

from .errors import NonEstimable
from .numerics import bvn_cdf, bvn_pdf, inverse_mills, minimize
from .numerics.special import std_normal_pdf

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"
FAMILIES = (CONTINUOUS, BINARY)

RHO_BOUND = 0.99
ATANH_RHO_BOUND = float(np.arctanh(RHO_BOUND))
START_RHO_CLIP = 0.95
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ParamLayout:
    """Positions of each parameter block in the flat parameter vector."""

    p: int
    q: int
    family: str
    selection: bool = True

    @property
    def has_sigma(self):
        return self.family == CONTINUOUS

    @property
    def has_rho(self):
        return self.selection

    @property
    def size(self):
        return self.p + self.q + int(self.has_sigma) + int(self.has_rho)

    def slices(self):
        out = {"beta_o": slice(0, self.p)}
        pos = self.p
        if self.selection:
            out["beta_s"] = slice(pos, pos + self.q)
            pos += self.q
        if self.has_sigma:
            out["log_sigma"] = slice(pos, pos + 1)
            pos += 1
        if self.has_rho:
            out["atanh_rho"] = slice(pos, pos + 1)
        return out


@dataclass
class ClusterData:
    x_outcome: np.ndarray
    x_selection: np.ndarray
    y: np.ndarray
    r: np.ndarray
    cluster_id: object = None

    def __post_init__(self):
        self.x_outcome = np.atleast_2d(np.asarray(self.x_outcome, dtype=float))
        self.x_selection = np.atleast_2d(np.asarray(self.x_selection, dtype=float))
        self.r = np.asarray(self.r).astype(bool)
        self.y = np.asarray(self.y, dtype=float)
        n = self.r.shape[0]
        if n < 1:
            raise ValueError("cluster has no rows")
        if self.x_outcome.shape[0] != n or self.x_selection.shape[0] != n or self.y.shape[0] != n:
            raise ValueError("row counts of y, r and design matrices differ")
        if not np.all(np.isfinite(self.y[self.r])):
            raise ValueError("observed rows must have finite y")

    @property
    def n(self):
        return self.r.shape[0]

    @property
    def n_observed(self):
        return int(self.r.sum())


@dataclass
class HeckmanParams:
    beta_o: np.ndarray
    beta_s: np.ndarray
    log_sigma: float = None
    atanh_rho: float = 0.0

    @property
    def sigma(self):
        return None if self.log_sigma is None else float(np.exp(self.log_sigma))

    @property
    def rho(self):
        return float(np.tanh(self.atanh_rho))

    def to_vector(self, layout):
        parts = [np.asarray(self.beta_o, dtype=float)]
        if layout.selection:
            parts.append(np.asarray(self.beta_s, dtype=float))
        if layout.has_sigma:
            parts.append([self.log_sigma])
        if layout.has_rho:
            parts.append([self.atanh_rho])
        return np.concatenate([np.ravel(p) for p in parts])

    @classmethod
    def from_vector(cls, theta, layout):
        sl = layout.slices()
        theta = np.asarray(theta, dtype=float)
        return cls(
            beta_o=theta[sl["beta_o"]].copy(),
            beta_s=theta[sl["beta_s"]].copy() if "beta_s" in sl else np.zeros(0),
            log_sigma=float(theta[sl["log_sigma"]][0]) if "log_sigma" in sl else None,
            atanh_rho=float(theta[sl["atanh_rho"]][0]) if "atanh_rho" in sl else 0.0,
        )


@dataclass
class ClusterFit:
    params: HeckmanParams
    vcov: np.ndarray
    converged: bool
    n_obs: int
    family: str
    layout: ParamLayout
    cluster_id: object = None
    loglik: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self):
        return self.params.to_vector(self.layout)

    def block(self, name):
        """Estimate and within-cluster covariance of one parameter block."""
        sl = self.layout.slices()[name]
        return self.theta[sl], self.vcov[sl, sl]

    def rho_interval(self, level_z=1.959963984540054):
        if not self.layout.has_rho:
            return (0.0, 0.0, 0.0)
        est, var = self.block("atanh_rho")
        se = float(np.sqrt(max(var[0, 0], 0.0)))
        z = float(est[0])
        return (float(np.tanh(z)), float(np.tanh(z - level_z * se)), float(np.tanh(z + level_z * se)))


def _split(theta, layout):
    sl = layout.slices()
    bo = theta[sl["beta_o"]]
    bs = theta[sl["beta_s"]]
    log_sigma = theta[sl["log_sigma"]][0] if layout.has_sigma else 0.0
    z = theta[sl["atanh_rho"]][0] if layout.has_rho else 0.0
    return bo, bs, log_sigma, z


def _lambda_neg(eta):
    # d/d eta of log Phi(-eta) is -lambda(-eta)
    return inverse_mills(-eta)


def loglik_continuous(params, data, grad=False):
    """Type-II tobit log-likelihood of one cluster.

    ``params`` is a :class:`HeckmanParams` or a flat vector in the
    continuous layout. With ``grad=True`` returns ``(value, gradient)``.
    """
    layout = ParamLayout(data.x_outcome.shape[1], data.x_selection.shape[1], CONTINUOUS)
    theta = params.to_vector(layout) if isinstance(params, HeckmanParams) else np.asarray(params, float)
    bo, bs, log_sigma, z = _split(theta, layout)
    r = data.r
    xs0 = data.x_selection[~r]
    xs1 = data.x_selection[r]
    xo1 = data.x_outcome[r]
    eta0 = xs0 @ bs
    eta_s = xs1 @ bs
    sigma = np.exp(log_sigma)
    u = (data.y[r] - xo1 @ bo) / sigma
    ch, sh = np.cosh(z), np.sinh(z)
    # (eta_s + rho*u) / sqrt(1 - rho^2) written with hyperbolic functions
    a = eta_s * ch + u * sh
    value = (
        sc.log_ndtr(-eta0).sum()
        + (-0.5 * u * u - _LOG_SQRT_2PI).sum()
        - u.size * log_sigma
        + sc.log_ndtr(a).sum()
    )
    if not grad:
        return float(value)
    lam = inverse_mills(a)
    g = np.zeros_like(theta)
    sl = layout.slices()
    g[sl["beta_o"]] = xo1.T @ ((u - lam * sh) / sigma)
    g[sl["beta_s"]] = xs1.T @ (lam * ch) - xs0.T @ _lambda_neg(eta0)
    g[sl["log_sigma"]] = np.sum(u * u - 1.0 - lam * u * sh)
    g[sl["atanh_rho"]] = np.sum(lam * (eta_s * sh + u * ch))
    return float(value), g


def binary_cell_probabilities(eta_o, eta_s, rho):
    """Probabilities of (r=0), (r=1, y=0), (r=1, y=1) per row."""
    p_unsel = np.asarray(sc.ndtr(-np.asarray(eta_s, float)))
    p1 = np.asarray(bvn_cdf(eta_o, eta_s, rho))
    p0 = np.asarray(bvn_cdf(-np.asarray(eta_o, float), eta_s, -rho))
    return p_unsel, p0, p1


def loglik_binary(params, data, grad=False):
    """Bivariate probit with sample selection, log-likelihood of one cluster."""
    layout = ParamLayout(data.x_outcome.shape[1], data.x_selection.shape[1], BINARY)
    theta = params.to_vector(layout) if isinstance(params, HeckmanParams) else np.asarray(params, float)
    bo, bs, _, z = _split(theta, layout)
    rho = np.tanh(z)
    r = data.r
    xs0 = data.x_selection[~r]
    xs1 = data.x_selection[r]
    xo1 = data.x_outcome[r]
    eta0 = xs0 @ bs
    q = 2.0 * data.y[r] - 1.0
    a = q * (xo1 @ bo)
    b = xs1 @ bs
    rq = q * rho
    p = np.maximum(np.asarray(bvn_cdf(a, b, rq)), 1e-300)
    value = sc.log_ndtr(-eta0).sum() + np.log(p).sum()
    if not grad:
        return float(value)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    da = std_normal_pdf(a) * sc.ndtr((b - rq * a) / s)
    db = std_normal_pdf(b) * sc.ndtr((a - rq * b) / s)
    dr = bvn_pdf(a, b, rq)
    g = np.zeros_like(theta)
    sl = layout.slices()
    g[sl["beta_o"]] = xo1.T @ (q * da / p)
    g[sl["beta_s"]] = xs1.T @ (db / p) - xs0.T @ _lambda_neg(eta0)
    g[sl["atanh_rho"]] = np.sum(q * dr / p) * (1.0 - rho * rho)
    return float(value), g


def loglik(params, data, family, grad=False):
    if family == CONTINUOUS:
        return loglik_continuous(params, data, grad=grad)
    if family == BINARY:
        return loglik_binary(params, data, grad=grad)
    raise ValueError(f"unknown family {family!r}")


# -- probit and least squares helpers ---------------------------------------


def probit_loglik(beta, X, y, grad=False):
    q = 2.0 * np.asarray(y, float) - 1.0
    eta = q * (X @ beta)
    value = float(sc.log_ndtr(eta).sum())
    if not grad:
        return value
    return value, X.T @ (q * inverse_mills(eta))


def fit_probit(X, y, max_iter=100, tol=1e-10):
    """Probit MLE by Newton-Raphson with step halving.

    Returns ``(beta, vcov)``; raises :class:`NonEstimable` on separation,
    rank deficiency or non-convergence.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k or y.min() == y.max():
        raise NonEstimable("probit needs variation in the response and more rows than columns")
    if np.linalg.matrix_rank(X) < k:
        raise NonEstimable("probit design matrix is rank deficient")
    beta = np.zeros(k)
    q = 2.0 * y - 1.0
    f = probit_loglik(beta, X, y)
    for _ in range(max_iter):
        eta = q * (X @ beta)
        lam = inverse_mills(eta)
        g = X.T @ (q * lam)
        w = lam * (lam + eta)
        H = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise NonEstimable("singular probit information") from exc
        t = 1.0
        while True:
            nb = beta + t * step
            nf = probit_loglik(nb, X, y)
            if nf >= f - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        beta, f_old, f = nb, f, nf
        if np.max(np.abs(beta)) > 30:
            raise NonEstimable("probit coefficients diverge (separation)")
        if np.max(np.abs(t * step)) < tol or abs(f - f_old) < tol * (1 + abs(f)):
            break
    else:
        raise NonEstimable("probit did not converge")
    eta = q * (X @ beta)
    lam = inverse_mills(eta)
    w = lam * (lam + eta)
    H = (X * w[:, None]).T @ X
    return beta, np.linalg.inv(H)


def fit_ols(X, y):
    """Least squares; returns ``(beta, residuals)``."""
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta, y - X @ beta


# -- estimation ---------------------------------------------------------------


def min_observed(layout):
    """Minimum observed rows: twice the parameter count of the full model."""
    return 2 * layout.size


def check_estimable(data, layout):
    n_obs = data.n_observed
    need = min_observed(layout)
    if n_obs < need:
        raise NonEstimable(f"{n_obs} observed rows, need at least {need}")
    if layout.selection and n_obs == data.n:
        raise NonEstimable("no unobserved rows: selection equation not identified")
    if layout.selection and n_obs == 0:
        raise NonEstimable("no observed rows")


def two_step_start(data, family):
    """Heckman two-step estimates, used as optimizer starting values."""
    if data.r.all() or not data.r.any():
        raise NonEstimable("selection indicator has no variation")
    beta_s, _ = fit_probit(data.x_selection, data.r.astype(float))
    r = data.r
    xo1 = data.x_outcome[r]
    y1 = data.y[r]
    if family == BINARY:
        beta_o, _ = fit_probit(xo1, y1)
        return HeckmanParams(beta_o=beta_o, beta_s=beta_s, log_sigma=None, atanh_rho=0.0)
    eta = data.x_selection[r] @ beta_s
    lam = inverse_mills(eta)
    Z = np.column_stack([xo1, lam])
    coef, resid = fit_ols(Z, y1)
    beta_o, b_lam = coef[:-1], coef[-1]
    delta = lam * (lam + eta)
    sigma2 = resid @ resid / resid.size + b_lam**2 * delta.mean()
    sigma = float(np.sqrt(max(sigma2, 1e-8)))
    rho = float(np.clip(b_lam / sigma, -START_RHO_CLIP, START_RHO_CLIP))
    return HeckmanParams(beta_o=beta_o, beta_s=beta_s, log_sigma=np.log(sigma), atanh_rho=float(np.arctanh(rho)))


def fit_cluster(data, family, rho_fixed=None, max_iter=500):
    """FIML fit of the Heckman model in one cluster.

    Parameters
    ----------
    data : ClusterData
    family : {"continuous", "binary"}
    rho_fixed : float, optional
        Hold the error correlation at this value. The atanh(rho) row and
        column of the returned covariance are then zero.

    Raises
    ------
    NonEstimable
        Too few observed rows, no selection variation, optimizer failure,
        or |rho| estimated at the 0.99 boundary.
    """
    layout = ParamLayout(data.x_outcome.shape[1], data.x_selection.shape[1], family)
    check_estimable(data, layout)
    start = two_step_start(data, family)
    theta0 = start.to_vector(layout)
    sl = layout.slices()
    rho_idx = sl["atanh_rho"].start
    if rho_fixed is not None:
        theta0[rho_idx] = np.arctanh(rho_fixed)
        free = np.ones(layout.size, dtype=bool)
        free[rho_idx] = False
    else:
        free = np.ones(layout.size, dtype=bool)
    base = theta0.copy()
    scale = 1.0 / max(data.n, 1)

    def full(x):
        t = base.copy()
        t[free] = x
        return t

    def nll(x):
        return -scale * loglik(full(x), data, family)

    def ngrad(x):
        _, g = loglik(full(x), data, family, grad=True)
        return -scale * g[free]

    try:
        res = minimize(nll, theta0[free], grad=ngrad, max_iter=max_iter)
    except ValueError as exc:
        raise NonEstimable(f"likelihood not finite at start: {exc}") from exc
    theta = full(res.x)
    if not np.all(np.isfinite(theta)):
        raise NonEstimable("non-finite estimates")
    if not res.converged:
        raise NonEstimable(f"optimizer did not converge ({res.message})")
    if rho_fixed is None and abs(theta[rho_idx]) >= ATANH_RHO_BOUND:
        raise NonEstimable(f"rho estimate {np.tanh(theta[rho_idx]):.4f} at the boundary")
    vcov = np.zeros((layout.size, layout.size))
    vcov[np.ix_(free, free)] = res.inv_hessian * scale
    return ClusterFit(
        params=HeckmanParams.from_vector(theta, layout),
        vcov=vcov,
        converged=True,
        n_obs=data.n,
        family=family,
        layout=layout,
        cluster_id=data.cluster_id,
        loglik=-res.fun / scale,
        diagnostics={"n_iter": res.n_iter, "n_observed": data.n_observed},
    )


def fit_cluster_mar(data, family):
    """Outcome-only fit on the observed rows (normal regression or probit).

    Used by the MAR comparator; the returned layout has no selection block
    and no correlation parameter.
    """
    layout = ParamLayout(data.x_outcome.shape[1], 0, family, selection=False)
    check_estimable(data, layout)
    X = data.x_outcome[data.r]
    y = data.y[data.r]
    if family == BINARY:
        beta, vb = fit_probit(X, y)
        return ClusterFit(
            params=HeckmanParams(beta_o=beta, beta_s=np.zeros(0)),
            vcov=vb, converged=True, n_obs=data.n, family=family, layout=layout,
            cluster_id=data.cluster_id,
        )
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise NonEstimable("outcome design matrix is rank deficient")
    beta, resid = fit_ols(X, y)
    n = y.size
    sigma2 = resid @ resid / n
    if sigma2 <= 0:
        raise NonEstimable("zero residual variance")
    p = X.shape[1]
    vcov = np.zeros((p + 1, p + 1))
    vcov[:p, :p] = sigma2 * np.linalg.inv(X.T @ X)
    vcov[p, p] = 1.0 / (2.0 * n)
    return ClusterFit(
        params=HeckmanParams(beta_o=beta, beta_s=np.zeros(0), log_sigma=0.5 * np.log(sigma2)),
        vcov=vcov, converged=True, n_obs=data.n, family=family, layout=layout,
        cluster_id=data.cluster_id,
    )
