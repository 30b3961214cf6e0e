"""Analysis model and Rubin's rules for completed datasets."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import NonEstimable, PoolingError
from ..heckman import BINARY, fit_ols, fit_probit
from ..meta import reml_multivariate

logger = logging.getLogger(__name__)

Z975 = float(stats.norm.ppf(0.975))
COEF_NAMES = ("b0", "b1", "b2")
SD_NAMES = ("sd_b0", "sd_b1", "sd_b2")


@dataclass
class ReplicateResult:
    method: str
    estimates: np.ndarray
    ses: np.ndarray
    re_sd: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    converged: bool = True
    seconds: float = 0.0
    df: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def failed(cls, method, seconds=0.0, reason=""):
        nan = np.full(3, np.nan)
        return cls(method, nan, nan, nan, nan, nan, converged=False, seconds=seconds,
                   extra={"error": reason})


def analyze_two_stage(data, family, outcome="y", predictors=("X1", "X2"), cluster="cluster",
                      method="analysis", psi_structure="full"):
    """Per-cluster regression followed by a REML meta-analysis.

    Rows with a missing outcome are ignored, so passing the incomplete data
    gives the complete-case analysis. Clusters whose regression fails are
    dropped with a warning.
    """
    start = time.perf_counter()
    frame = data[data[outcome].notna()]
    est, cov = [], []
    for cid, grp in frame.groupby(cluster, sort=True):
        X = np.column_stack([np.ones(len(grp))] + [grp[c].to_numpy(float) for c in predictors])
        y = grp[outcome].to_numpy(float)
        p = X.shape[1]
        try:
            if family == BINARY:
                beta, vb = fit_probit(X, y)
            else:
                if y.size <= p or np.linalg.matrix_rank(X) < p:
                    raise NonEstimable("too few rows for least squares")
                beta, resid = fit_ols(X, y)
                s2 = resid @ resid / (y.size - p)
                vb = s2 * np.linalg.inv(X.T @ X)
        except NonEstimable as exc:
            logger.warning("analysis dropped cluster %s: %s", cid, exc)
            continue
        est.append(beta)
        # keep the within-cluster covariance strictly positive definite
        cov.append(vb + 1e-12 * np.eye(p))
    try:
        meta = reml_multivariate(np.array(est), np.array(cov), structure=psi_structure, compute_s_psi=False)
    except PoolingError as exc:
        return ReplicateResult.failed(method, time.perf_counter() - start, str(exc))
    ses = np.sqrt(np.diag(meta.s_theta))
    theta = meta.theta_hat
    return ReplicateResult(
        method=method,
        estimates=theta,
        ses=ses,
        re_sd=np.sqrt(np.clip(np.diag(meta.psi_hat), 0.0, None)),
        ci_low=theta - Z975 * ses,
        ci_high=theta + Z975 * ses,
        converged=True,
        seconds=time.perf_counter() - start,
        extra={"n_clusters": len(est), "meta_method": meta.method},
    )


def rubin_pool(results, method=None):
    """Combine per-imputation analyses with Rubin's rules.

    Point estimates are averaged; total variance ``T = W + (1 + 1/m) B``
    with the classic degrees of freedom ``(m - 1) (1 + W / ((1 + 1/m) B))^2``.
    Wald intervals use the t quantile, or the normal one when ``B = 0``.
    Random-effect SDs are averaged.
    """
    m = len(results)
    if m < 2:
        raise PoolingError(f"Rubin's rules need at least 2 imputations, got {m}")
    Q = np.array([r.estimates for r in results], dtype=float)
    U = np.array([r.ses for r in results], dtype=float) ** 2
    qbar = Q.mean(axis=0)
    W = U.mean(axis=0)
    B = Q.var(axis=0, ddof=1)
    inflate = (1.0 + 1.0 / m) * B
    T = W + inflate
    with np.errstate(divide="ignore", invalid="ignore"):
        df = np.where(inflate > 0, (m - 1) * (1.0 + W / inflate) ** 2, np.inf)
    q = np.where(np.isfinite(df), stats.t.ppf(0.975, np.where(np.isfinite(df), df, 1.0)), Z975)
    se = np.sqrt(T)
    return ReplicateResult(
        method=method or results[0].method,
        estimates=qbar,
        ses=se,
        re_sd=np.mean([r.re_sd for r in results], axis=0),
        ci_low=qbar - q * se,
        ci_high=qbar + q * se,
        converged=all(r.converged for r in results),
        seconds=sum(r.seconds for r in results),
        df=df,
        extra={"W": W, "B": B, "T": T, "m": m},
    )
