"""Posterior-predictive sampling and pointwise summaries."""
import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dgpemu.errors import DimMismatch, DomainError
from dgpemu.model import (
    _check_batch,
    cross_covariance,
    layer_factors,
    moments_from_cross,
    sample_layer,
)


@dataclass
class PredictiveSummary:
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise DomainError("lower bound exceeds upper bound")
        if np.any(self.variance < 0):
            raise DomainError("negative variance")


def predict_samples(x_star, model, R, rng=None, include_noise=False):
    """Draw ``R`` recursive posterior samples at each row of ``x_star``.

    Each replicate uses its own alpha draw (in estimated mode) shared by all
    prediction points, and fresh standard-normal noise at every layer.
    Returns an ``R x p`` matrix.
    """
    if R < 1:
        raise DomainError("R must be >= 1")
    layer1 = model.layers[0]
    x = np.asarray(x_star, dtype=float)
    if x.ndim == 2 and x.shape[1] != model.input_dim:
        raise DimMismatch(f"inputs have {x.shape[1]} columns, model expects {model.input_dim}")
    x = _check_batch(x, layer1)
    rng = np.random.default_rng(rng)
    p = x.shape[0]
    if model.alpha_mode == "estimated":
        q = model.alpha
        alphas = q.m_alpha + np.sqrt(q.s_alpha) * rng.standard_normal(R)
    else:
        alphas = np.full(R, float(model.alpha))

    layer1_factors = layer_factors(layer1, jitter=model.jitter)
    mean1, var1 = moments_from_cross(cross_covariance(x, layer1), layer1_factors, layer1.kernel.sigma2)
    sd1 = np.sqrt(var1)
    cached = {}
    out = np.empty((R, p))
    for r in range(R):
        eps = rng.standard_normal((model.n_layers, p))
        f = mean1 + eps[0] * sd1
        a = alphas[r]
        for n in range(1, model.n_layers):
            layer = model.layers[n]
            key = (n, a)
            fac = cached.get(key)
            if fac is None:
                fac = layer_factors(layer, a, model.jitter)
                if model.alpha_mode != "estimated":
                    cached[key] = fac
            Kxz = cross_covariance(x, layer, f, a)
            mean, var = moments_from_cross(Kxz, fac, layer.kernel.sigma2)
            f = sample_layer(mean, var, eps[n])
        if include_noise:
            f = f + np.sqrt(model.noise_var) * rng.standard_normal(p)
        out[r] = f
    return out


def summarize(samples, level=0.95, keep_samples=False):
    """Column-wise mean, unbiased variance and equal-tailed interval."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        raise DomainError("summaries need at least 2 samples")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(s, [tail, 1.0 - tail], axis=0, method="linear")
    mean = s.mean(axis=0)
    # guard the constant-column case against rounding in the quantiles
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    return PredictiveSummary(mean, s.var(axis=0, ddof=1), lo, hi, level, s if keep_samples else None)


def write_predictions(path, x_star, summary, columns=None):
    """One row per point: inputs, mean, var, lo95, hi95 at full precision."""
    x = np.asarray(x_star, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    names = columns or [f"x{j + 1}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["mean", "var", "lo95", "hi95"])
        for i in range(x.shape[0]):
            vals = list(x[i]) + [summary.mean[i], summary.variance[i], summary.lower[i], summary.upper[i]]
            w.writerow([f"{v:.17g}" for v in vals])


def read_predictions(path):
    """Inverse of :func:`write_predictions`: ``(x, summary)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path} is empty")
    header = rows[0]
    need = ["mean", "var", "lo95", "hi95"]
    if header[-4:] != need:
        raise DomainError(f"{path} lacks the columns {need}")
    data = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(header))
    x = data[:, :-4]
    summary = PredictiveSummary(data[:, -4], data[:, -3], data[:, -2], data[:, -1])
    return x, summary
