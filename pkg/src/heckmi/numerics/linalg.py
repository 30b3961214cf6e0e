import logging

import numpy as np

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-10


def nearest_psd(m, floor=EIGEN_FLOOR):
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping.

    The result is the Frobenius-nearest matrix whose eigenvalues are all
    at least ``floor``. Input that already satisfies the floor comes back
    unchanged.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError("nearest_psd requires a square matrix")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-8 * scale):
        raise ValueError("nearest_psd requires a symmetric matrix")
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.size and vals.min() >= floor:
        return m.copy()
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def projection_distance(m, projected):
    return float(np.linalg.norm(np.asarray(m) - np.asarray(projected), "fro"))


def solve_spd(a, b, ridge=0.0):
    """Solve ``a x = b`` for symmetric positive (semi)definite ``a``.

    Falls back to a pseudo-inverse when the Cholesky factorisation fails.
    """
    a = np.asarray(a, dtype=float)
    if ridge:
        a = a + ridge * np.eye(a.shape[0])
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(a, hermitian=True) @ b
    y = np.linalg.solve(c, b)
    return np.linalg.solve(c.T, y)


def vech(m):
    """Lower-triangular elements of a square matrix, column-major order."""
    m = np.asarray(m)
    d = m.shape[0]
    rows, cols = np.tril_indices(d)
    order = np.lexsort((rows, cols))
    return m[rows[order], cols[order]]


def unvech(v, d):
    v = np.asarray(v, dtype=float)
    rows, cols = np.tril_indices(d)
    order = np.lexsort((rows, cols))
    out = np.zeros((d, d))
    out[rows[order], cols[order]] = v
    out[cols[order], rows[order]] = v
    return out
