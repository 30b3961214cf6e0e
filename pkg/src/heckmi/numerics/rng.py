"""Hierarchically keyed random streams.

Every stochastic step in the package takes an :class:`RngStream`. A stream
is identified by a master seed and a path of non-negative integers such as
``(replicate, imputation, cluster)``; children are derived by extending the
path, so work can be split across processes without sharing generator
state. Streams are backed by numpy's counter-based Philox bit generator
seeded through :class:`numpy.random.SeedSequence`, which makes the draw
sequence for a given ``(seed, path)`` identical across runs and platforms.
"""

import zlib

import numpy as np

from .linalg import EIGEN_FLOOR

_MASK64 = (1 << 64) - 1


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("stream path entries must be non-negative")
    return k


class RngStream:
    def __init__(self, master_seed, path=()):
        self.master_seed = int(master_seed) & _MASK64
        self.path = tuple(_key(k) for k in path)
        self._gen = None

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, path={self.path})"

    def child(self, *keys):
        """Independent stream at ``path + keys``; string keys are hashed."""
        return RngStream(self.master_seed, self.path + tuple(_key(k) for k in keys))

    @property
    def generator(self):
        if self._gen is None:
            seq = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen


def draw_normal(stream, mean=0.0, sd=1.0, size=None):
    if np.any(np.asarray(sd) < 0):
        raise ValueError("sd must be non-negative")
    return stream.generator.normal(mean, sd, size=size)


def draw_mvnormal(stream, mean, cov, size=None):
    """Multivariate normal draw via the eigen square root of ``cov``.

    ``cov`` must be symmetric PSD up to roundoff; eigenvalues below
    ``-1e-8 * max|cov|`` are rejected.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ValueError("covariance shape does not match mean")
    if not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    tol = 1e-8 * max(1.0, float(np.abs(vals).max()))
    if vals.min() < -tol:
        raise ValueError("covariance must be positive semidefinite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    n = 1 if size is None else int(np.prod(size))
    z = stream.generator.standard_normal((n, d))
    out = mean + z @ root.T
    if size is None:
        return out[0]
    return out.reshape(tuple(np.atleast_1d(size)) + (d,))


def draw_bernoulli(stream, p, size=None):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1) | np.isnan(p)):
        raise ValueError("Bernoulli probability outside [0, 1]")
    if size is None:
        size = p.shape
    u = stream.generator.random(size)
    return (u < p).astype(np.int64)


def draw_chisq(stream, df, size=None):
    if df <= 0:
        raise ValueError("df must be positive")
    return stream.generator.chisquare(df, size=size)


def draw_bvn_skew_t(stream, scale, alpha, df, size=None):
    """Bivariate skew-t draws (Azzalini's construction).

    A skew-normal vector with scale matrix ``scale`` and shape ``alpha`` is
    generated by the conditioning representation and divided by
    ``sqrt(chi2_df / df)``. Location is zero.
    """
    scale = np.asarray(scale, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if scale.shape != (2, 2) or alpha.shape != (2,):
        raise ValueError("bivariate skew-t needs a 2x2 scale and a length-2 alpha")
    if np.linalg.eigvalsh(scale).min() < EIGEN_FLOOR or not np.allclose(scale, scale.T):
        raise ValueError("scale matrix must be symmetric positive definite")
    if df <= 0:
        raise ValueError("df must be positive")
    n = 1 if size is None else int(size)
    omega = np.sqrt(np.diag(scale))
    corr = scale / np.outer(omega, omega)
    delta = corr @ alpha / np.sqrt(1.0 + alpha @ corr @ alpha)
    joint = np.empty((3, 3))
    joint[0, 0] = 1.0
    joint[0, 1:] = joint[1:, 0] = delta
    joint[1:, 1:] = corr
    z = draw_mvnormal(stream, np.zeros(3), joint, size=n)
    sn = np.where(z[:, :1] > 0, z[:, 1:], -z[:, 1:]) * omega
    w = draw_chisq(stream, df, size=n) / df
    out = sn / np.sqrt(w)[:, None]
    return out[0] if size is None else out
