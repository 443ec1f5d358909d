"""Stationarity check: is the fitted hidden layer (almost) constant?

A DGP with one hidden layer is fitted to the data.  The hidden layer only
acts through the log length scale ``alpha * f_1`` of the output layer, so
the decision statistic is the standard deviation of ``alpha_hat * mu_1``
over the design, where ``mu_1`` are the hidden-layer posterior means.  A
small value means the output length scale hardly varies and a stationary GP
is adequate.

The variational fit has several local optima (a short-length-scale
stationary fit of a discontinuous response is a common one), so the model
is fitted from a few seeds and the fit with the best evidence bound is kept.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dgpemu import inference
from dgpemu.model import layer1_conditional
from dgpemu.trainer import TrainConfig, train

DEFAULT_THRESHOLD = 0.3
DEFAULT_RESTARTS = 3


@dataclass
class StationarityReport:
    hidden_mean: np.ndarray = field(repr=False)
    sd_f1: float
    range_ratio: float  # sd_f1 / |range of the inducing means|
    alpha_hat: float
    dispersion: float  # sd of alpha_hat * mu_1
    threshold: float
    stationary_adequate: Optional[bool]
    elbo: float = float("nan")
    restarts: int = 0
    warning: str = ""

    def lines(self):
        flag = "undecided" if self.stationary_adequate is None else str(self.stationary_adequate).lower()
        out = [
            f"sd_f1={self.sd_f1:.6g}",
            f"range_ratio={self.range_ratio:.6g}",
            f"alpha_hat={self.alpha_hat:.6g}",
            f"dispersion={self.dispersion:.6g}",
            f"threshold={self.threshold:.6g}",
            f"elbo={self.elbo:.6g}",
            f"restarts={self.restarts}",
            f"stationary_adequate={flag}",
        ]
        if self.warning:
            out.append(f"warning={self.warning}")
        return out


def diagnose_config(**overrides):
    base = dict(n_iters=2000, num_inducing=20, n_layers=2, alpha_mode="estimated",
                alpha_init=(3.0, 1.0), alpha_prior=(3.5, 1.0), lr=0.02, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def _evidence(model, X, y, seed):
    # frozen noise so that restarts are compared on the same draws
    return inference.elbo_minibatch(model, X, y, T=16, S=8, rng=seed).value


def diagnose(X, y, threshold=DEFAULT_THRESHOLD, config=None, restarts=DEFAULT_RESTARTS):
    """Fit a one-hidden-layer DGP and report how much the hidden layer varies.

    Parameters
    ----------
    X : array_like, shape (n, d)
        Inputs, preferably scaled to the unit cube.
    y : array_like, shape (n,)
    threshold : float
        The hidden layer counts as (almost) constant when the standard
        deviation of the output log length scale is below this value.
    config : TrainConfig, optional
        Training settings; ``n_layers`` is forced to 2.  Restart ``k`` uses
        ``config.seed + k``.
    restarts : int
        Number of independently seeded fits; the best bound wins.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1:
        X = X.T
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.ptp(y) == 0:
        return StationarityReport(np.zeros(y.size), 0.0, float("nan"), float("nan"), 0.0,
                                  threshold, None, warning="constant response; no decision")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    config = replace(config or diagnose_config(), n_layers=2)
    # work on a standardized response so the fit does not depend on its units
    ys = (y - y.mean()) / y.std()
    best, best_elbo = None, -np.inf
    for k in range(restarts):
        model, _ = train(X, ys, replace(config, seed=config.seed + k))
        elbo = _evidence(model, X, ys, config.seed)
        if best is None or elbo > best_elbo:
            best, best_elbo = model, elbo
    hidden = best.layers[0]
    mu1, _ = layer1_conditional(X, hidden, best.jitter)
    sd_f1 = float(np.std(mu1))
    span = float(np.ptp(hidden.m_vec))
    alpha_hat = float(best.alpha_point())
    dispersion = abs(alpha_hat) * sd_f1
    return StationarityReport(
        hidden_mean=mu1,
        sd_f1=sd_f1,
        range_ratio=sd_f1 / span if span > 0 else float("nan"),
        alpha_hat=alpha_hat,
        dispersion=dispersion,
        threshold=threshold,
        stationary_adequate=bool(dispersion < threshold),
        elbo=float(best_elbo),
        restarts=restarts,
    )
