"""Dense SPD linear algebra and Gaussian KL divergences."""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg as sla

from dgpemu.errors import DomainError, FactorizationFailed

LADDER_STEPS = 7  # 0, j, 10j, ..., 1e6 j


def cholesky_psd(M, jitter=1e-8):
    """Lower Cholesky factor of ``M + j*I`` for the smallest workable ``j``.

    The ladder tried is ``0, jitter, 10*jitter, ..., 1e6*jitter``.

    Returns
    -------
    L : ndarray
        Lower-triangular factor.
    applied : float
        The jitter that made the factorization succeed.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {M.shape}")
    if jitter < 0:
        raise DomainError("jitter must be non-negative")
    if not np.all(np.isfinite(M)):
        raise FactorizationFailed("matrix has non-finite entries")
    eye = np.eye(M.shape[0])
    ladder = [0.0]
    if jitter > 0:
        ladder += [jitter * 10.0**k for k in range(LADDER_STEPS)]
    for j in ladder:
        try:
            L = sla.cholesky(M + j * eye, lower=True, check_finite=False)
        except sla.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, j
    raise FactorizationFailed(
        f"Cholesky failed for all jitters up to {ladder[-1]:.3g} (n={M.shape[0]})"
    )


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive-definite matrix with a lazily cached factor."""

    entries: np.ndarray
    jitter: float = 1e-8
    applied_jitter: float = field(default=0.0, init=False, compare=False)

    def __post_init__(self):
        M = np.asarray(self.entries, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DomainError(f"expected a square matrix, got shape {M.shape}")
        scale = max(np.abs(M).max(), 1e-300)
        if np.abs(M - M.T).max() > 1e-12 * scale:
            raise DomainError("matrix is not symmetric")
        object.__setattr__(self, "entries", M)

    @property
    def dim(self):
        return self.entries.shape[0]

    @cached_property
    def chol(self):
        L, j = cholesky_psd(self.entries, self.jitter)
        object.__setattr__(self, "applied_jitter", j)
        return L

    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.chol)))

    def solve(self, b):
        return sla.cho_solve((self.chol, True), b, check_finite=False)


def _as_spd(M):
    return M if isinstance(M, SpdMatrix) else SpdMatrix(np.asarray(M, dtype=float))


def kl_mvn_vs_zero_mean(m, s, K):
    """KL( N(m, s) || N(0, K) ) in closed form."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    s, K = _as_spd(s), _as_spd(K)
    if not (m.shape[0] == s.dim == K.dim):
        raise DomainError(f"dimension mismatch: m={m.shape[0]}, s={s.dim}, K={K.dim}")
    Lk = K.chol
    half_trace = sla.solve_triangular(Lk, s.chol, lower=True, check_finite=False)
    alpha = sla.solve_triangular(Lk, m, lower=True, check_finite=False)
    kl = 0.5 * (
        np.sum(half_trace**2) + alpha @ alpha - m.shape[0] + K.logdet() - s.logdet()
    )
    return max(float(kl), 0.0)


def kl_univariate_normal(m_q, s_q, m_p, s_p):
    """KL( N(m_q, s_q) || N(m_p, s_p) ); ``s_q``, ``s_p`` are variances."""
    if not (s_q > 0 and s_p > 0):
        raise DomainError(f"variances must be positive, got {s_q}, {s_p}")
    ratio = s_q / s_p
    return 0.5 * (ratio + (m_q - m_p) ** 2 / s_p - 1.0 - np.log(ratio))
