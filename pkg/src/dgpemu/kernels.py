"""Matérn correlation and the non-stationary covariance with H(f) = exp(alpha f).

The non-stationary covariance between ``(x, f)`` and ``(x', f')`` has the
Paciorek form with local matrices ``Sigma(x) = I / H(f(x))``::

    sigma2 * |Sigma|^{1/4} |Sigma'|^{1/4} / |(Sigma + Sigma') / 2|^{1/2} * rho(sqrt(Q))
    Q = (x - x')^T ((Sigma + Sigma') / 2)^{-1} (x - x')

with ``rho(r) = matern(r / lam)``.  The prefactor equals
``2^{d/2} [H H']^{d/4} / [H + H']^{d/2}``.  ``H`` acts as a local precision, so
increasing ``alpha f`` shortens the correlation range and the covariance
between distinct points vanishes as ``alpha`` grows.  With ``alpha = 0`` it
reduces exactly to the stationary ``sigma2 * rho(|x - x'|)``.

Scalar operations here are written directly from the formula; the matrix
assembly in :func:`gram` goes through the (compiled or NumPy) backend.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

from dgpemu import _backend
from dgpemu.errors import DomainError

NU_CODES = {0.5: 0, 1.5: 1, 2.5: 2}
LOG_H_CLAMP = 40.0


@dataclass(frozen=True)
class MaternSpec:
    """Half-integer Matérn covariance: smoothness, length scale(s), variance.

    ``lam`` may be a scalar or, for the base layer, one length scale per
    input dimension.
    """

    nu: float = 2.5
    lam: Union[float, np.ndarray] = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if self.nu not in NU_CODES:
            raise DomainError(f"nu must be one of {sorted(NU_CODES)}, got {self.nu}")
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim > 1 or np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise DomainError(f"length scale must be positive, got {self.lam}")
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "lam", float(lam) if lam.ndim == 0 else lam)

    @property
    def nu_code(self):
        return NU_CODES[self.nu]

    @property
    def ard(self):
        return np.ndim(self.lam) == 1

    def inv_lam(self, dim):
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (dim,))
        return 1.0 / lam


@dataclass(frozen=True)
class NonStatKernel:
    base: MaternSpec
    alpha: float
    dim: int

    def __post_init__(self):
        if not self.alpha >= 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}")
        if self.base.ard:
            raise DomainError("non-stationary layers use an isotropic length scale")


def _scalar_lam(spec):
    if spec.ard:
        raise DomainError("scalar correlation needs an isotropic length scale")
    return spec.lam


def matern_corr(r, spec):
    """Matérn correlation rho(r / lam); ``r`` may be an array."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("distance must be non-negative")
    out = _backend.python_impl.matern(r / _scalar_lam(spec), spec.nu_code)
    return float(out) if out.ndim == 0 else out


def length_scale(f, alpha):
    """H(f) = exp(alpha f), with the exponent clamped to [-40, 40]."""
    return np.exp(np.clip(alpha * np.asarray(f, dtype=float), -LOG_H_CLAMP, LOG_H_CLAMP))


def _pair(x, x2):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise DomainError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return x, x2


def stat_cov(x, x2, spec):
    x, x2 = _pair(x, x2)
    r = np.sqrt(np.sum(((x - x2) * spec.inv_lam(x.shape[0])) ** 2))
    return spec.sigma2 * float(_backend.python_impl.matern(r, spec.nu_code))


def nonstat_cov(x, x2, f, f2, k):
    x, x2 = _pair(x, x2)
    if x.shape[0] != k.dim:
        raise DomainError(f"kernel dim {k.dim} but inputs have dim {x.shape[0]}")
    d = k.dim
    sig = np.eye(d) / length_scale(f, k.alpha)
    sig2 = np.eye(d) / length_scale(f2, k.alpha)
    avg = 0.5 * (sig + sig2)
    prefactor = (np.linalg.det(sig) * np.linalg.det(sig2)) ** 0.25 / np.sqrt(np.linalg.det(avg))
    diff = x - x2
    root_q = np.sqrt(diff @ np.linalg.solve(avg, diff))
    return k.base.sigma2 * prefactor * matern_corr(root_q, k.base)


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def gram(Xa, Xb, fa=None, fb=None, kernel=None):
    """Covariance matrix between the rows of ``Xa`` and ``Xb``.

    ``fa``/``fb`` carry the previous-layer values and must be given exactly
    when ``kernel`` is a :class:`NonStatKernel`.
    """
    Xa, Xb = _as_2d(Xa), _as_2d(Xb)
    if Xa.shape[1] != Xb.shape[1]:
        raise DomainError(f"column mismatch: {Xa.shape[1]} vs {Xb.shape[1]}")
    if isinstance(kernel, NonStatKernel):
        if fa is None or fb is None:
            raise DomainError("non-stationary gram needs previous-layer values")
        if Xa.shape[1] != kernel.dim:
            raise DomainError(f"kernel dim {kernel.dim} but inputs have dim {Xa.shape[1]}")
        return nonstat_cross(Xa, Xb, fa, fb, kernel.alpha, kernel.base)
    if fa is not None or fb is not None:
        raise DomainError("stationary gram takes no previous-layer values")
    spec = kernel
    return _backend.stat_cross(Xa, Xb, spec.inv_lam(Xa.shape[1]), spec.sigma2, spec.nu_code)


def nonstat_cross(Xa, Xb, fa, fb, alpha, spec):
    """Array-level non-stationary covariance; ``alpha`` may be any real."""
    # the backend takes log Sigma scales, i.e. -log H
    la = -np.clip(alpha * np.asarray(fa, dtype=float), -LOG_H_CLAMP, LOG_H_CLAMP)
    lb = -np.clip(alpha * np.asarray(fb, dtype=float), -LOG_H_CLAMP, LOG_H_CLAMP)
    if la.shape != (Xa.shape[0],) or lb.shape != (Xb.shape[0],):
        raise DomainError("previous-layer values must match the number of rows")
    return _backend.nonstat_cross(
        Xa, Xb, la, lb, 1.0 / _scalar_lam(spec), spec.sigma2, spec.nu_code
    )
