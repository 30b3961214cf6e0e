"""Normal-distribution special functions.

All functions accept scalars or arrays and broadcast like numpy ufuncs.
Scalar input returns a Python float.
"""

import math

import numpy as np
from scipy import integrate
from scipy import special as sc

__all__ = [
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_logcdf",
    "std_normal_quantile",
    "bvn_cdf",
    "bvn_pdf",
    "inverse_mills",
    "fisher_z",
    "fisher_z_inv",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi


def _out(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _out(np.exp(-0.5 * x * x - _LOG_SQRT_2PI))


def std_normal_cdf(x):
    return _out(sc.ndtr(np.asarray(x, dtype=float)))


def std_normal_logcdf(x):
    return _out(sc.log_ndtr(np.asarray(x, dtype=float)))


def std_normal_quantile(p):
    """Inverse of the standard normal CDF.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    return _out(sc.ndtri(p))


# Asymptotic series of the Mills ratio R(t) = Phi(-t)/phi(t) for large t:
# R(t) ~ (1/t) * sum_k (-1)^k (2k-1)!! / t^(2k). Twenty terms keep the
# truncation error below 1e-12 relative for t >= 8.
_MILLS_TERMS = 20
_MILLS_SWITCH = -8.0


def _mills_asymptotic(t):
    t2 = t * t
    term = np.ones_like(t)
    total = np.ones_like(t)
    for k in range(1, _MILLS_TERMS):
        term = -term * (2 * k - 1) / t2
        total = total + term
    return total / t


def inverse_mills(x):
    """phi(x) / Phi(x), stable across the real line.

    Uses the direct ratio for ``x >= -8`` and the reciprocal of the
    asymptotic Mills-ratio series below that, where both numerator and
    denominator underflow together.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    tail = x < _MILLS_SWITCH
    body = ~tail
    xb = x[body]
    out[body] = np.exp(-0.5 * xb * xb - _LOG_SQRT_2PI) / sc.ndtr(xb)
    if np.any(tail):
        out[tail] = 1.0 / _mills_asymptotic(-x[tail])
    return _out(out)


def fisher_z(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~(np.abs(rho) < 1.0)):
        raise ValueError("fisher_z requires |rho| < 1")
    return _out(np.arctanh(rho))


def fisher_z_inv(z):
    return _out(np.tanh(np.asarray(z, dtype=float)))


def _half_gauss_legendre(n):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    keep = nodes > 0
    x = nodes[keep]
    w = weights[keep]
    # Nodes on [0, 2]; the integrand is evaluated at asin(r)/2 * x.
    return np.concatenate([1.0 - x, 1.0 + x]), np.concatenate([w, w])


_GL = {n: _half_gauss_legendre(n) for n in (6, 12, 20)}


def _bvnu_moderate(h, k, r, n):
    """Upper orthant probability for |r| < 0.925 (Drezner-Wesolowsky form)."""
    x, w = _GL[n]
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * np.arcsin(r)
    sn = np.sin(asr[:, None] * x[None, :])
    integrand = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
    bvn = integrand @ w
    return bvn * asr / _TWO_PI + sc.ndtr(-h) * sc.ndtr(-k)


def _bvnu_high(h, k, r):
    """Upper orthant probability for |r| >= 0.925 (Genz's refinement)."""
    x, w = _GL[20]
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)
    inner = np.abs(r) < 1.0
    if np.any(inner):
        hi, ki, hki, ri = h[inner], k[inner], hk[inner], r[inner]
        as_ = (1.0 - ri) * (1.0 + ri)
        a = np.sqrt(as_)
        bs = (hi - ki) ** 2
        c = (4.0 - hki) / 8.0
        d = (12.0 - hki) / 80.0
        asr = -0.5 * (bs / as_ + hki)
        part = np.where(
            asr > -100.0,
            a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_),
            0.0,
        )
        b = np.sqrt(bs)
        sp = math.sqrt(_TWO_PI) * sc.ndtr(-b / a)
        part = np.where(
            hki > -100.0,
            part - np.exp(-0.5 * hki) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
            part,
        )
        a = 0.5 * a
        xs = (a[:, None] * x[None, :]) ** 2
        asr2 = -0.5 * (bs[:, None] / xs + hki[:, None])
        ok = asr2 > -100.0
        sp2 = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-0.5 * hki[:, None] * xs / (1.0 + rs) ** 2) / rs
        terms = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (sp2 - ep), 0.0)
        bvn[inner] = (a * (terms @ w) - part) / _TWO_PI
    pos = ~neg
    out = np.empty_like(h)
    out[pos] = bvn[pos] + sc.ndtr(-np.maximum(h[pos], k[pos]))
    hn, kn, bn = h[neg], k[neg], bvn[neg]
    span = np.where(hn < 0, sc.ndtr(kn) - sc.ndtr(hn), sc.ndtr(-hn) - sc.ndtr(-kn))
    out[neg] = np.where(hn >= kn, -bn, span - bn)
    return out


def _bvnu(h, k, r):
    out = np.empty_like(h)
    ar = np.abs(r)
    zero = r == 0.0
    out[zero] = sc.ndtr(-h[zero]) * sc.ndtr(-k[zero])
    for lo, hi, n in ((0.0, 0.3, 6), (0.3, 0.75, 12), (0.75, 0.925, 20)):
        sel = (ar < hi) & (ar >= lo) & ~zero
        if np.any(sel):
            out[sel] = _bvnu_moderate(h[sel], k[sel], r[sel], n)
    sel = ar >= 0.925
    if np.any(sel):
        out[sel] = _bvnu_high(h[sel], k[sel], r[sel])
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(a, b, rho):
    """Standard bivariate normal CDF P(X <= a, Y <= b) with corr(X, Y) = rho.

    Gauss-Legendre quadrature of the Drezner-Wesolowsky type with the
    node count chosen by |rho|; absolute error is near machine precision.
    Infinite limits are supported.
    """
    a, b, rho = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(rho, dtype=float)
    )
    shape = a.shape
    a, b, rho = a.ravel(), b.ravel(), rho.ravel()
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("bvn_cdf requires |rho| <= 1")
    out = np.empty(a.shape)
    lo = (a == -np.inf) | (b == -np.inf)
    a_inf = (a == np.inf) & ~lo
    b_inf = (b == np.inf) & ~lo & ~a_inf
    out[lo] = 0.0
    out[a_inf] = sc.ndtr(b[a_inf])
    out[b_inf] = sc.ndtr(a[b_inf])
    fin = ~(lo | a_inf | b_inf)
    if np.any(fin):
        # Evaluate the smaller of the two symmetric orderings so the
        # result is exactly symmetric in (a, b).
        af, bf = a[fin], b[fin]
        lo_ab = np.minimum(af, bf)
        hi_ab = np.maximum(af, bf)
        val = _bvnu(-lo_ab, -hi_ab, rho[fin])
        rf = rho[fin]
        # For rho < 0 the quadrature subtracts terms of similar size, so tiny
        # probabilities keep only absolute accuracy. Log-likelihoods need
        # relative accuracy there; redo those few by direct integration.
        tiny = np.flatnonzero((val < _TAIL_REFINE) & (rf < 0.0) & (rf > -1.0))
        for i in tiny:
            val[i] = _bvn_tail(lo_ab[i], hi_ab[i], rf[i])
        out[fin] = val
    return _out(out.reshape(shape))


_TAIL_REFINE = 1e-8


def _bvn_tail(a, b, r):
    # P(X <= a, Y <= b) = int_{-inf}^{a} phi(x) Phi((b - r x) / s) dx; the
    # integrand is positive, so quadrature keeps relative precision.
    s = math.sqrt((1.0 - r) * (1.0 + r))

    def f(t):
        x = a - t
        return math.exp(-0.5 * x * x - _LOG_SQRT_2PI) * sc.ndtr((b - r * x) / s)

    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=200)
    return val


def bvn_pdf(a, b, rho):
    """Standard bivariate normal density."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rho = np.asarray(rho, dtype=float)
    om = (1.0 - rho) * (1.0 + rho)
    q = (a * a - 2.0 * rho * a * b + b * b) / om
    return _out(np.exp(-0.5 * q) / (_TWO_PI * np.sqrt(om)))
