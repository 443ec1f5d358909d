"""NumPy implementation of the covariance assembly kernels.

Same contract as the compiled ``_ckernels`` module; selected by
:mod:`dgpemu._backend` when the extension is unavailable.

Both kernels return ``sigma2 * prefactor * rho(q)`` where ``rho`` is the
half-integer Matérn correlation indexed by ``nu_code`` (0, 1, 2 for
nu = 0.5, 1.5, 2.5).  Non-stationary inputs are passed as ``l = log s``,
where ``s * I`` is the local anisotropy matrix of each point; the caller
converts its length-scale function to this form.
"""
import numpy as np
from scipy.spatial.distance import cdist

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)


def matern(q, nu_code):
    q = np.asarray(q, dtype=float)
    if nu_code == 0:
        return np.exp(-q)
    if nu_code == 1:
        s = SQRT3 * q
        return (1.0 + s) * np.exp(-s)
    s = SQRT5 * q
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def stat_cross(Xa, Xb, inv_lam, sigma2, nu_code):
    """Stationary cross-covariance with per-dimension inverse length scales."""
    inv_lam = np.asarray(inv_lam, dtype=float)
    r2 = cdist(Xa * inv_lam, Xb * inv_lam, "sqeuclidean")
    return sigma2 * matern(np.sqrt(r2), nu_code)


def nonstat_cross(Xa, Xb, la, lb, inv_lam, sigma2, nu_code):
    """Non-stationary cross-covariance with local scale matrices exp(l) I."""
    d = Xa.shape[1]
    r2 = cdist(Xa, Xb, "sqeuclidean")
    ea = np.exp(0.5 * np.asarray(la, dtype=float))[:, None]
    eb = np.exp(0.5 * np.asarray(lb, dtype=float))[None, :]
    havg = 0.5 * (ea * ea + eb * eb)
    pref = ea * eb / havg
    if d != 2:
        pref = pref ** (0.5 * d)
    q = np.sqrt(r2 / havg) * inv_lam
    return sigma2 * pref * matern(q, nu_code)
