"""Random-effects meta-analysis of cluster estimates by REML.

``reml_multivariate`` handles vector-valued cluster estimates with a full
or diagonal between-cluster covariance; ``reml_univariate`` is the scalar
case solved by Fisher scoring. ``pool_heckman`` runs one meta-analysis per
parameter block of a set of cluster fits.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PoolingError
from .numerics import minimize, nearest_psd, unvech, vech

logger = logging.getLogger(__name__)

PSI_STRUCTURES = ("full", "diagonal")


@dataclass
class MetaFit:
    theta_hat: np.ndarray
    psi_hat: np.ndarray
    s_theta: np.ndarray
    s_psi: np.ndarray
    method: str = "reml"
    converged: bool = True
    n_clusters: int = 0

    @property
    def dim(self):
        return self.theta_hat.shape[0]


@dataclass
class MarginalModel:
    blocks: dict
    contributing_clusters: list
    family: str
    layout: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def block_o(self):
        return self.blocks["beta_o"]

    @property
    def block_s(self):
        return self.blocks.get("beta_s")

    @property
    def meta_log_sigma(self):
        return self.blocks.get("log_sigma")

    @property
    def meta_atanh_rho(self):
        return self.blocks.get("atanh_rho")


def _check_input(estimates, vcovs):
    y = np.asarray(estimates, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    S = np.asarray(vcovs, dtype=float)
    if S.ndim == 1:
        S = S[:, None, None]
    k, d = y.shape
    if k < 2:
        raise PoolingError(f"need at least 2 clusters to pool, got {k}")
    if S.shape != (k, d, d):
        raise PoolingError("estimates and covariance matrices do not conform")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(S)):
        raise PoolingError("non-finite cluster estimates or covariances")
    return y, 0.5 * (S + np.transpose(S, (0, 2, 1)))


def _canonical_order(y, S):
    # Sum order affects the last bits of every statistic; a data-defined
    # order makes results independent of the caller's cluster order.
    keys = [S.reshape(S.shape[0], -1)[:, j] for j in range(S.shape[1] * S.shape[2] - 1, -1, -1)]
    keys += [y[:, j] for j in range(y.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return y[order], S[order]


def reml_univariate(estimates, variances, tol=1e-12, max_iter=200):
    """Scalar random-effects model ``y_i ~ N(mu, tau2 + v_i)`` by REML.

    tau2 is found by Fisher scoring truncated at zero. ``s_psi`` is the
    inverse expected REML information for tau2.
    """
    y, S = _check_input(np.ravel(estimates), np.ravel(variances))
    y, S = _canonical_order(y, S)
    y = y[:, 0]
    v = S[:, 0, 0]
    if np.any(v < 0):
        raise PoolingError("negative within-cluster variance")
    k = y.size

    def parts(tau2):
        w = 1.0 / (v + tau2)
        sw = w.sum()
        mu = (w @ y) / sw
        # P = W - w w^T / sw; its trace, P y and tr(P P)
        tr_p = sw - (w @ w) / sw
        py = w * (y - mu)
        tr_pp = (w @ w) - 2.0 * (w**3).sum() / sw + (w @ w) ** 2 / sw**2
        return w, sw, mu, tr_p, py, tr_pp

    tau2 = max(0.0, float(np.var(y, ddof=1) - v.mean()))
    converged = False
    for _ in range(max_iter):
        w, sw, mu, tr_p, py, tr_pp = parts(tau2)
        score = 0.5 * (py @ py - tr_p)
        info = 0.5 * tr_pp
        if info <= 0 or not np.isfinite(info):
            break
        new = max(0.0, tau2 + score / info)
        if abs(new - tau2) <= tol * max(1.0, tau2):
            tau2 = new
            converged = True
            break
        tau2 = new
    if not converged:
        logger.warning("univariate REML did not converge; using moments estimate")
        tau2 = max(0.0, float(np.var(y, ddof=1) - v.mean()))
    w, sw, mu, tr_p, py, tr_pp = parts(tau2)
    return MetaFit(
        theta_hat=np.array([mu]),
        psi_hat=np.array([[tau2]]),
        s_theta=np.array([[1.0 / sw]]),
        s_psi=np.array([[1.0 / (0.5 * tr_pp)]]) if tr_pp > 0 else np.zeros((1, 1)),
        method="reml" if converged else "moments",
        converged=converged,
        n_clusters=k,
    )


def _gls(y, W):
    sw = W.sum(axis=0)
    rhs = np.einsum("kij,kj->i", W, y)
    s_theta = np.linalg.inv(sw)
    s_theta = 0.5 * (s_theta + s_theta.T)
    return s_theta @ rhs, s_theta, sw


def _psi_from_params(x, d, structure):
    if structure == "diagonal":
        return np.diag(np.exp(2.0 * x))
    L = np.zeros((d, d))
    L[np.tril_indices(d)] = x
    L[np.diag_indices(d)] = np.exp(np.diag(L))
    return L @ L.T


def _params_from_psi(psi, d, structure):
    psi = nearest_psd(psi)
    if structure == "diagonal":
        return 0.5 * np.log(np.diag(psi))
    L = np.linalg.cholesky(psi)
    L[np.diag_indices(d)] = np.log(np.diag(L))
    return L[np.tril_indices(d)]


def reml_negloglik(psi, y, S):
    """Negative restricted log-likelihood (up to a constant)."""
    V = psi[None, :, :] + S
    try:
        C = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        return np.inf
    logdet_v = 2.0 * np.log(np.diagonal(C, axis1=1, axis2=2)).sum()
    W = np.linalg.inv(V)
    mu, _, sw = _gls(y, W)
    sign, logdet_sw = np.linalg.slogdet(sw)
    if sign <= 0:
        return np.inf
    e = y - mu
    quad = np.einsum("ki,kij,kj->", e, W, e)
    return 0.5 * (logdet_v + logdet_sw + quad)


def _moments(y, S):
    k = y.shape[0]
    psi = np.cov(y, rowvar=False, ddof=1).reshape(y.shape[1], y.shape[1]) - S.mean(axis=0)
    psi = nearest_psd(0.5 * (psi + psi.T), floor=0.0)
    return psi


def _reml_information(psi, S, structure):
    """Expected REML information for the distinct elements of psi."""
    k, d, _ = S.shape
    V = psi[None] + S
    W = np.linalg.inv(V)
    sw = W.sum(axis=0)
    sw_inv = np.linalg.inv(sw)
    # P = blockdiag(W) - (W_i sw^-1 W_j)_{ij}
    Wd = np.zeros((k * d, k * d))
    for i in range(k):
        Wd[i * d:(i + 1) * d, i * d:(i + 1) * d] = W[i]
    Wx = W.reshape(k * d, d)
    P = Wd - Wx @ sw_inv @ Wx.T
    rows, cols = np.tril_indices(d)
    order = np.lexsort((rows, cols))
    elems = list(zip(rows[order], cols[order]))
    A = []
    for (a, b) in elems:
        E = np.zeros((d, d))
        E[a, b] = E[b, a] = 1.0
        A.append(P @ np.kron(np.eye(k), E))
    n = len(elems)
    info = np.empty((n, n))
    for i in range(n):
        for j in range(i + 1):
            info[i, j] = info[j, i] = 0.5 * np.sum(A[i] * A[j].T)
    if structure == "diagonal":
        keep = np.array([a == b for a, b in elems])
        out = np.zeros((n, n))
        sub = info[np.ix_(keep, keep)]
        out[np.ix_(keep, keep)] = _safe_inverse(sub)
        return out
    return _safe_inverse(info)


def _safe_inverse(m):
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(m, hermitian=True)
    return nearest_psd(0.5 * (inv + inv.T), floor=0.0)


def reml_multivariate(estimates, vcovs, structure="full", compute_s_psi=True):
    """Multivariate random-effects meta-analysis by REML.

    Parameters
    ----------
    estimates : array_like, shape (k, d)
    vcovs : array_like, shape (k, d, d)
        Within-cluster covariance of each estimate.
    structure : {"full", "diagonal"}
        Between-cluster covariance structure.
    compute_s_psi : bool
        Skip the sampling covariance of psi when only point estimates and
        ``s_theta`` are needed.

    Returns
    -------
    MetaFit
        ``s_psi`` is indexed by ``vech(psi)`` (column-major lower triangle).
    """
    if structure not in PSI_STRUCTURES:
        raise ValueError(f"psi structure must be one of {PSI_STRUCTURES}")
    y, S = _check_input(estimates, vcovs)
    k, d = y.shape
    if d == 1:
        return reml_univariate(y[:, 0], S[:, 0, 0])
    y, S = _canonical_order(y, S)
    psi0 = _moments(y, S)
    if structure == "diagonal":
        psi0 = np.diag(np.diag(psi0))
    floor = 1e-3 * float(np.mean(np.diagonal(S, axis1=1, axis2=2)))
    psi0 = psi0 + floor * np.eye(d)
    x0 = _params_from_psi(psi0, d, structure)

    def objective(x):
        return reml_negloglik(_psi_from_params(x, d, structure), y, S)

    method = "reml"
    converged = True
    try:
        res = minimize(objective, x0, hessian=False, max_iter=500)
        psi = _psi_from_params(res.x, d, structure)
        converged = res.converged
    except ValueError:
        converged = False
    if not converged:
        logger.warning("multivariate REML did not converge; falling back to method of moments")
        method = "moments"
        psi = _moments(y, S)
        if structure == "diagonal":
            psi = np.diag(np.diag(psi))
    psi = 0.5 * (psi + psi.T)
    W = np.linalg.inv(psi[None] + S)
    mu, s_theta, _ = _gls(y, W)
    m = d * (d + 1) // 2
    s_psi = _reml_information(psi, S, structure) if compute_s_psi else np.full((m, m), np.nan)
    return MetaFit(
        theta_hat=mu, psi_hat=psi, s_theta=s_theta, s_psi=s_psi,
        method=method, converged=converged, n_clusters=k,
    )


def pool_heckman(fits, psi_structure="full"):
    """Pool converged cluster fits into a :class:`MarginalModel`.

    Each parameter block is pooled on its own, using the matching
    sub-matrix of every cluster covariance. Fits that are ``None`` or not
    converged are skipped.
    """
    used = [f for f in fits if f is not None and f.converged]
    if len(used) < 2:
        raise PoolingError(f"need at least 2 estimable clusters, got {len(used)}")
    layout = used[0].layout
    if any(f.layout != layout for f in used):
        raise PoolingError("cluster fits have different parameter layouts")
    blocks = {}
    for name in layout.slices():
        est = np.array([f.block(name)[0] for f in used])
        cov = np.array([f.block(name)[1] for f in used])
        if est.shape[1] == 1:
            blocks[name] = reml_univariate(est[:, 0], cov[:, 0, 0])
        else:
            blocks[name] = reml_multivariate(est, cov, structure=psi_structure)
    return MarginalModel(
        blocks=blocks,
        contributing_clusters=[f.cluster_id for f in used],
        family=layout.family,
        layout=layout,
    )


def psi_from_vech(v, d):
    return unvech(v, d)


def psi_to_vech(m):
    return vech(m)
