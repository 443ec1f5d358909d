"""Monte Carlo estimation of the DGP evidence lower bound and its gradients.

The minibatch estimator is::

    ELBO ~= n/|B| sum_{i in B} E_i - KL(q(u_1) || p(u_1))
            - E_{q(alpha)}[ sum_{n>=2} KL(q(u_n) || p(u_n; alpha)) ]
            - KL(q(alpha) || p(alpha))

where ``E_i`` averages ``log N(y_i | f_N^i, noise_var)`` over ``T`` recursive
reparameterized draws through the layers, each draw using one alpha sample
shared by the whole batch.  In ``fixed``/``optimized`` mode alpha is a scalar
and the alpha KL is dropped.

All randomness is drawn on the host (:class:`MCNoise`) so that values and
gradients are exact functions of the parameters under frozen noise.
"""
from dataclasses import dataclass
from typing import Optional

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402
from jax.scipy.linalg import solve_triangular  # noqa: E402

from dgpemu.kernels import LOG_H_CLAMP  # noqa: E402
from dgpemu.model import VAR_FLOOR  # noqa: E402

LOG_2PI = float(np.log(2.0 * np.pi))
TRAIN_T, TRAIN_S = 1, 1
REPORT_T, REPORT_S = 64, 32


# ---------------------------------------------------------------------------
# differentiable kernels (mirror dgpemu.kernels)
# ---------------------------------------------------------------------------


def _matern(q, nu_code):
    if nu_code == 0:
        return jnp.exp(-q)
    if nu_code == 1:
        s = jnp.sqrt(3.0) * q
        return (1.0 + s) * jnp.exp(-s)
    s = jnp.sqrt(5.0) * q
    return (1.0 + s + s * s / 3.0) * jnp.exp(-s)


def _sq_dist(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return jnp.sum(diff * diff, axis=-1)


def _safe_sqrt(r2):
    # zero distances (the Gram diagonal) get a zero gradient instead of NaN
    return jnp.sqrt(jnp.maximum(r2, 1e-36))


def stat_cross(A, B, lam, sigma2, nu_code):
    inv = 1.0 / lam
    return sigma2 * _matern(_safe_sqrt(_sq_dist(A * inv, B * inv)), nu_code)


def nonstat_cross(A, B, fa, fb, alpha, lam, sigma2, nu_code):
    d = A.shape[1]
    # log Sigma scales: Sigma = I / H(f)
    la = -jnp.clip(alpha * fa, -LOG_H_CLAMP, LOG_H_CLAMP)
    lb = -jnp.clip(alpha * fb, -LOG_H_CLAMP, LOG_H_CLAMP)
    ea = jnp.exp(0.5 * la)[:, None]
    eb = jnp.exp(0.5 * lb)[None, :]
    havg = 0.5 * (ea * ea + eb * eb)
    pref = (ea * eb / havg) ** (0.5 * d)
    q = _safe_sqrt(_sq_dist(A, B) / havg) / lam
    return sigma2 * pref * _matern(q, nu_code)


# ---------------------------------------------------------------------------
# layer computations
# ---------------------------------------------------------------------------


def _s_parts(lp):
    """(S, lower factor of S) from either a factor or a full matrix."""
    if "s_factor" in lp:
        Ls = jnp.tril(lp["s_factor"])
        return Ls @ Ls.T, Ls
    S = lp["S"]
    return S, jnp.linalg.cholesky(S)


def _inducing_chol(lp, alpha, first, nu_code, jitter):
    Z = lp["Z"]
    if first:
        K = stat_cross(Z, Z, lp["lam"], lp["sigma2"], nu_code)
    else:
        K = nonstat_cross(Z, Z, lp["delta_Z"], lp["delta_Z"], alpha, lp["lam"], lp["sigma2"], nu_code)
    K = K + jitter * lp["sigma2"] * jnp.eye(Z.shape[0])
    return jnp.linalg.cholesky(K)


def _factors(lp, alpha, first, nu_code, jitter):
    """K^{-1} m and B = K^{-1} (K - S) K^{-1}; m^3 work shared by all points."""
    L = _inducing_chol(lp, alpha, first, nu_code, jitter)
    _, Ls = _s_parts(lp)
    Linv = solve_triangular(L, jnp.eye(L.shape[0]), lower=True)
    K_inv = Linv.T @ Linv
    W = K_inv @ Ls
    return K_inv @ lp["m_vec"], K_inv - W @ W.T


def _moments(x, f_prev, lp, alpha, first, nu_code, jitter):
    Z = lp["Z"]
    a, B = _factors(lp, alpha, first, nu_code, jitter)
    if first:
        Kzx = stat_cross(Z, x, lp["lam"], lp["sigma2"], nu_code)
    else:
        Kzx = nonstat_cross(Z, x, lp["delta_Z"], f_prev, alpha, lp["lam"], lp["sigma2"], nu_code)
    mean = Kzx.T @ a
    var = lp["sigma2"] - jnp.sum(Kzx * (B @ Kzx), axis=0)
    return mean, jnp.maximum(var, VAR_FLOOR)


def _kl_layer(lp, alpha, first, nu_code, jitter):
    L = _inducing_chol(lp, alpha, first, nu_code, jitter)
    _, Ls = _s_parts(lp)
    half = solve_triangular(L, Ls, lower=True)
    a = solve_triangular(L, lp["m_vec"], lower=True)
    logdet_k = 2.0 * jnp.sum(jnp.log(jnp.diag(L)))
    logdet_s = 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(Ls))))
    m = lp["m_vec"].shape[0]
    return 0.5 * (jnp.sum(half * half) + a @ a - m + logdet_k - logdet_s)


def _kl_alpha(m_q, s_q, m_p, s_p):
    ratio = s_q / s_p
    return 0.5 * (ratio + (m_q - m_p) ** 2 / s_p - 1.0 - jnp.log(ratio))


def _alpha_draws(params, xi, mode):
    if mode == "estimated":
        a = params["alpha"]
        return a["m_alpha"] + jnp.sqrt(a["s_alpha"]) * xi
    return jnp.broadcast_to(params["alpha"]["alpha"], xi.shape)


def propagate(params, x, eps, alpha_t, nu_code, jitter):
    """Final-layer draws, shape ``(T, b)``, for ``eps`` of shape ``(T, N, b)``."""
    layers = params["layers"]
    mean, var = _moments(x, None, layers[0], None, True, nu_code, jitter)
    f = mean[None, :] + eps[:, 0, :] * jnp.sqrt(var)[None, :]
    for n in range(1, len(layers)):
        lp = layers[n]

        def one(f_prev, a, e, lp=lp):
            mu, v = _moments(x, f_prev, lp, a, False, nu_code, jitter)
            return mu + e * jnp.sqrt(v)

        f = jax.vmap(one)(f, alpha_t, eps[:, n, :])
    return f


def elbo_terms(params, X, y, n_total, eps, alpha_xi, kl_xi, prior, *, mode, nu_code, jitter):
    """Every term of the minibatch ELBO under the given frozen noise."""
    layers = params["layers"]
    noise = params["noise_var"]
    alpha_t = _alpha_draws(params, alpha_xi, mode)
    f = propagate(params, X, eps, alpha_t, nu_code, jitter)
    loglik = -0.5 * (LOG_2PI + jnp.log(noise)) - 0.5 * (y[None, :] - f) ** 2 / noise
    ell = n_total / X.shape[0] * jnp.sum(jnp.mean(loglik, axis=0))

    kl_u1 = _kl_layer(layers[0], None, True, nu_code, jitter)
    kl_layers = jnp.zeros(())
    kl_alpha = jnp.zeros(())
    if len(layers) > 1:
        alpha_s = _alpha_draws(params, kl_xi, mode)
        if mode != "estimated":
            alpha_s = alpha_s[:1]

        def kl_at(a):
            return sum(_kl_layer(lp, a, False, nu_code, jitter) for lp in layers[1:])

        kl_layers = jnp.mean(jax.vmap(kl_at)(alpha_s))
    if mode == "estimated" and len(layers) > 1:
        a = params["alpha"]
        kl_alpha = _kl_alpha(a["m_alpha"], a["s_alpha"], prior[0], prior[1])
    elbo = ell - kl_u1 - kl_layers - kl_alpha
    return {"elbo": elbo, "ell": ell, "kl_u1": kl_u1, "kl_layers": kl_layers, "kl_alpha": kl_alpha}


_STATIC = ("mode", "nu_code", "jitter")
_terms_jit = jax.jit(elbo_terms, static_argnames=_STATIC)


def _elbo_value(params, *args, **kw):
    return elbo_terms(params, *args, **kw)["elbo"]


_grad_jit = jax.jit(jax.value_and_grad(_elbo_value), static_argnames=_STATIC)


# ---------------------------------------------------------------------------
# model <-> parameter trees
# ---------------------------------------------------------------------------


def model_params(model):
    """Constrained parameter tree of ``model`` as float64 JAX arrays."""
    layers = []
    for layer in model.layers:
        lp = {
            "Z": jnp.asarray(layer.Z),
            "m_vec": jnp.asarray(layer.m_vec),
            "s_factor": jnp.asarray(layer.s_factor),
            "sigma2": jnp.asarray(layer.kernel.sigma2, dtype=jnp.float64),
            "lam": jnp.asarray(layer.kernel.lam, dtype=jnp.float64),
        }
        if layer.delta_Z is not None:
            lp["delta_Z"] = jnp.asarray(layer.delta_Z)
        layers.append(lp)
    if model.alpha_mode == "estimated":
        alpha = {"m_alpha": jnp.asarray(model.alpha.m_alpha), "s_alpha": jnp.asarray(model.alpha.s_alpha)}
    else:
        alpha = {"alpha": jnp.asarray(model.alpha, dtype=jnp.float64)}
    return {"layers": layers, "noise_var": jnp.asarray(model.noise_var), "alpha": alpha}


def alpha_prior(model):
    if model.alpha_mode == "estimated":
        return jnp.asarray([model.alpha.prior_mean, model.alpha.prior_var])
    return jnp.asarray([0.0, 1.0])


def static_args(model):
    return {"mode": model.alpha_mode, "nu_code": model.layers[0].kernel.nu_code, "jitter": model.jitter}


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


@dataclass
class MCNoise:
    """Frozen standard-normal draws for one ELBO evaluation."""

    alpha_xi: np.ndarray  # (T,)
    eps: np.ndarray  # (T, N, b)
    kl_xi: np.ndarray  # (S,)

    @property
    def n_mc(self):
        return self.eps.shape[0]


def draw_noise(rng, T, n_layers, batch_size, S=1):
    """Draw alpha, layer and KL noise in a fixed order."""
    if T < 1 or S < 1:
        raise ValueError("T and S must be >= 1")
    alpha_xi = rng.standard_normal(T)
    eps = rng.standard_normal((T, n_layers, batch_size))
    kl_xi = rng.standard_normal(S)
    return MCNoise(alpha_xi, eps, kl_xi)


@dataclass
class ElboEstimate:
    value: float
    n_mc: int
    batch_indices: np.ndarray
    rng_seed: Optional[int] = None
    terms: Optional[dict] = None

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        idx = np.asarray(self.batch_indices)
        if np.unique(idx).size != idx.size:
            raise ValueError("batch indices must be unique")


def _rng_and_seed(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


def _prepare(model, X, y, batch):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and model.input_dim == 1 and X.shape[1] != 1:
        X = X.T
    y = np.asarray(y, dtype=float).reshape(-1)
    batch = np.arange(X.shape[0]) if batch is None else np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    if batch.min() < 0 or batch.max() >= X.shape[0]:
        raise ValueError("batch indices out of range")
    return X, y, batch


def _call(fn, model, X, y, batch, noise):
    args = (
        jnp.asarray(X[batch]),
        jnp.asarray(y[batch]),
        float(X.shape[0]),
        jnp.asarray(noise.eps),
        jnp.asarray(noise.alpha_xi),
        jnp.asarray(noise.kl_xi),
        alpha_prior(model),
    )
    return fn(model_params(model), *args, **static_args(model))


def elbo_minibatch(model, X, y, batch=None, T=REPORT_T, rng=None, S=REPORT_S, noise=None):
    """Minibatch ELBO estimate (``batch=None`` uses every point)."""
    X, y, batch = _prepare(model, X, y, batch)
    rng, seed = _rng_and_seed(rng)
    if noise is None:
        noise = draw_noise(rng, T, model.n_layers, batch.size, S)
    terms = _call(_terms_jit, model, X, y, batch, noise)
    terms = {k: float(v) for k, v in terms.items()}
    return ElboEstimate(terms["elbo"], noise.n_mc, batch, seed, terms)


def expected_log_lik(x, y, model, T=REPORT_T, rng=None, noise=None):
    """MC estimate of E_q[log N(y_i | f_N(x_i), noise_var)] per point."""
    X, yv, batch = _prepare(model, x, y, None)
    rng, _ = _rng_and_seed(rng)
    if noise is None:
        noise = draw_noise(rng, T, model.n_layers, batch.size, 1)
    params = model_params(model)
    alpha_t = _alpha_draws(params, jnp.asarray(noise.alpha_xi), model.alpha_mode)
    st = static_args(model)
    f = propagate(params, jnp.asarray(X), jnp.asarray(noise.eps), alpha_t, st["nu_code"], st["jitter"])
    nv = model.noise_var
    ll = -0.5 * (LOG_2PI + np.log(nv)) - 0.5 * (yv[None, :] - np.asarray(f)) ** 2 / nv
    out = ll.mean(axis=0)
    return float(out[0]) if out.size == 1 else out


def _grads_to_numpy(model, g):
    layers = []
    for n, lg in enumerate(g["layers"]):
        d = {
            "Z": np.asarray(lg["Z"]),
            "m_vec": np.asarray(lg["m_vec"]),
            "s_factor": np.tril(np.asarray(lg["s_factor"])),
            "sigma2": float(lg["sigma2"]),
            "lam": np.asarray(lg["lam"]) if model.layers[n].kernel.ard else float(lg["lam"]),
        }
        if "delta_Z" in lg:
            d["delta_Z"] = np.asarray(lg["delta_Z"])
        layers.append(d)
    out = {"layers": layers, "noise_var": float(g["noise_var"])}
    out.update({k: float(v) for k, v in g["alpha"].items()})
    return out


def elbo_gradient(model, X, y, batch=None, T=TRAIN_T, rng=None, S=TRAIN_S, noise=None):
    """ELBO estimate and its exact gradient under common random numbers.

    Gradients are taken with respect to the model's own (constrained)
    quantities: per layer ``Z``, ``m_vec``, ``s_factor``, ``delta_Z``,
    ``sigma2``, ``lam``; then ``noise_var`` and ``m_alpha``/``s_alpha`` or
    ``alpha`` depending on the mode.
    """
    X, y, batch = _prepare(model, X, y, batch)
    rng, seed = _rng_and_seed(rng)
    if noise is None:
        noise = draw_noise(rng, T, model.n_layers, batch.size, S)
    value, g = _call(_grad_jit, model, X, y, batch, noise)
    if model.alpha_mode == "fixed":
        g["alpha"] = {}
    est = ElboEstimate(float(value), noise.n_mc, batch, seed)
    return est, _grads_to_numpy(model, g)
