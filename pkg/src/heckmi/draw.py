"""Parameter draws and imputation draws.

A marginal draw perturbs the pooled estimates by their sampling error;
cluster draws then combine that draw with each cluster's own fit by
precision weighting, or use the marginal draw alone for clusters without
a usable fit. Imputed values come from the selection-model conditional
distribution of the outcome given non-selection.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    bvn_cdf,
    draw_bernoulli,
    draw_mvnormal,
    inverse_mills,
    nearest_psd,
    projection_distance,
    std_normal_cdf,
    unvech,
    vech,
)
from .numerics.linalg import EIGEN_FLOOR

logger = logging.getLogger(__name__)

RIDGE = 1e-8
BLOCK_ORDER = ("beta_o", "beta_s", "log_sigma", "atanh_rho")


@dataclass
class DrawnMarginal:
    theta: dict
    psi: dict
    projection: dict = field(default_factory=dict)

    @property
    def theta_star(self):
        return np.concatenate([self.theta[b] for b in BLOCK_ORDER if b in self.theta])

    @property
    def psi_star(self):
        return self.psi


@dataclass
class DrawnClusterParams:
    cluster_id: object
    beta_o: np.ndarray
    beta_s: np.ndarray
    sigma: float = None
    rho: float = 0.0


def draw_marginal(model, rng):
    """Draw (Theta*, psi*) from the sampling distribution of the pooled fit."""
    theta, psi, proj = {}, {}, {}
    for i, name in enumerate(BLOCK_ORDER):
        fit = model.blocks.get(name)
        if fit is None:
            continue
        stream = rng.child(i)
        theta[name] = draw_mvnormal(stream.child(0), fit.theta_hat, fit.s_theta)
        d = fit.dim
        if d == 1:
            mean = fit.psi_hat[0, 0]
            sd = np.sqrt(max(fit.s_psi[0, 0], 0.0))
            raw = mean + sd * stream.child(1).generator.standard_normal()
            psi[name] = np.array([[max(raw, 0.0)]])
            proj[name] = max(-raw, 0.0)
            continue
        v = draw_mvnormal(stream.child(1), vech(fit.psi_hat), fit.s_psi)
        raw = unvech(v, d)
        fixed = nearest_psd(raw, floor=EIGEN_FLOOR)
        psi[name] = fixed
        proj[name] = projection_distance(raw, fixed)
    return DrawnMarginal(theta=theta, psi=psi, projection=proj)


def shrink_block(theta_hat, s_hat, theta_star, psi_star, ridge=RIDGE):
    """Mean and covariance of the precision-weighted combination.

    Equivalent to ``(psi^-1 + S^-1)^-1 (psi^-1 Theta* + S^-1 theta_hat)``
    with covariance ``(psi^-1 + S^-1)^-1``, written so that neither psi
    nor S is inverted on its own.
    """
    d = theta_star.shape[0]
    total = psi_star + s_hat + ridge * np.eye(d)
    gain = np.linalg.solve(total, psi_star).T  # psi (psi + S)^-1
    mean = theta_star + gain @ (theta_hat - theta_star)
    cov = psi_star - gain @ psi_star
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def draw_cluster(fit, marginal, rng, cluster_id=None):
    """Draw cluster-specific parameters.

    With a fit, each block is drawn from the precision-weighted posterior of
    the cluster estimate and the marginal draw; without one (systematically
    missing or non-estimable cluster) it is drawn from N(Theta*, psi*).
    """
    out = {}
    for i, name in enumerate(BLOCK_ORDER):
        if name not in marginal.theta:
            continue
        t_star = marginal.theta[name]
        p_star = marginal.psi[name]
        if fit is not None:
            est, cov = fit.block(name)
            mean, post = shrink_block(est, cov, t_star, p_star)
        else:
            mean, post = t_star, p_star
        post = nearest_psd(post, floor=0.0)
        out[name] = draw_mvnormal(rng.child(i), mean, post)
    cid = cluster_id if fit is None else fit.cluster_id
    return DrawnClusterParams(
        cluster_id=cid,
        beta_o=out["beta_o"],
        beta_s=out.get("beta_s", np.zeros(0)),
        sigma=float(np.exp(out["log_sigma"][0])) if "log_sigma" in out else None,
        rho=float(np.tanh(out["atanh_rho"][0])) if "atanh_rho" in out else 0.0,
    )


def continuous_mean(x_outcome, x_selection, params):
    """E[y | r = 0] under the selection model."""
    mu = np.asarray(x_outcome, float) @ params.beta_o
    if params.rho == 0.0:
        return mu
    eta = np.asarray(x_selection, float) @ params.beta_s
    # phi(eta) / Phi(-eta) is the inverse Mills ratio at -eta
    return mu - params.rho * params.sigma * inverse_mills(-eta)


def impute_continuous(x_outcome, x_selection, params, rng):
    """One draw per unselected row from N(E[y | r=0], sigma*^2)."""
    mu = np.atleast_1d(continuous_mean(x_outcome, x_selection, params))
    return mu + params.sigma * rng.generator.standard_normal(mu.shape[0])


def binary_probability(x_outcome, x_selection, params):
    """P(y = 1 | r = 0) under the bivariate probit selection model."""
    a = np.atleast_1d(np.asarray(x_outcome, float) @ params.beta_o)
    if params.rho == 0.0:
        return np.asarray(std_normal_cdf(a))
    b = np.atleast_1d(np.asarray(x_selection, float) @ params.beta_s)
    denom = np.asarray(std_normal_cdf(-b))
    num = np.asarray(bvn_cdf(a, -b, -params.rho))
    tiny = denom < 1e-300
    if np.any(tiny):
        logger.warning("%d rows with selection probability ~1; using the outcome margin", tiny.sum())
    p = np.where(tiny, np.asarray(std_normal_cdf(a)), num / np.where(tiny, 1.0, denom))
    return np.clip(p, 0.0, 1.0)


def impute_binary(x_outcome, x_selection, params, rng):
    p = binary_probability(x_outcome, x_selection, params)
    return draw_bernoulli(rng, p)
