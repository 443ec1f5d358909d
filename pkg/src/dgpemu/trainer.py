"""Optimization loop: natural gradient on the last layer, Adam on the rest.

Every iteration draws one minibatch and one set of Monte Carlo noise, takes
the exact gradient of the resulting ELBO estimate, applies a natural-gradient
step to the last layer's ``(m, S)`` and an Adam step to every other trainable
quantity.  Positive quantities are optimized on a softplus scale.
"""
import csv
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple, Union

import jax
import jax.numpy as jnp
import numpy as np
from scipy import linalg as sla

from dgpemu import inference
from dgpemu.errors import DomainError, FactorizationFailed, StepFailed
from dgpemu.kernels import MaternSpec
from dgpemu.model import AlphaPosterior, DgpModel, LayerState, init_model

POS_FLOOR = 1e-6
MAX_HALVINGS = 10
MAX_SKIPPED_STEPS = 10  # consecutive failed natural steps before giving up
WARMUP_ITERS = 100
WARMUP_START = 0.01


# ---------------------------------------------------------------------------
# configuration and trace
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Settings for :func:`train`.

    ``alpha_init`` is ``(mean, variance)`` in estimated mode and a scalar in
    the other modes; ``alpha_prior`` is ``(mean, variance)``.
    """

    n_iters: int = 5000
    batch_size: Optional[int] = None  # None: full batch
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 0.1
    T: int = inference.TRAIN_T
    S: int = inference.TRAIN_S
    seed: int = 0
    alpha_mode: str = "estimated"
    alpha_init: Union[Tuple[float, float], float] = (3.0, 1.0)
    alpha_prior: Tuple[float, float] = (3.5, 1.0)
    num_inducing: int = 200
    n_layers: int = 2
    nu: float = 2.5
    lengthscale: float = 0.2
    ard: bool = True
    jitter: float = 1e-6
    natgrad: bool = True
    natgrad_max_kl: Optional[float] = 0.1  # natural-step trust region, nats per inducing variable
    eval_every: int = 0  # 0: no frozen-noise evaluations

    def __post_init__(self):
        if self.n_iters < 0:
            raise DomainError("n_iters must be >= 0")
        if not 0 < self.gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        if not self.lr > 0:
            raise DomainError("lr must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.T < 1 or self.S < 1:
            raise DomainError("T and S must be >= 1")
        if self.alpha_mode not in ("estimated", "optimized", "fixed"):
            raise DomainError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.n_layers < 1 or self.num_inducing < 1:
            raise DomainError("n_layers and num_inducing must be >= 1")
        if self.natgrad_max_kl is not None and not self.natgrad_max_kl > 0:
            raise DomainError("natgrad_max_kl must be positive")
        if isinstance(self.alpha_init, list):
            self.alpha_init = tuple(self.alpha_init)
        self.alpha_prior = tuple(self.alpha_prior)

    def to_dict(self):
        d = asdict(self)
        d["alpha_init"] = list(d["alpha_init"]) if isinstance(d["alpha_init"], tuple) else d["alpha_init"]
        d["alpha_prior"] = list(d["alpha_prior"])
        return d


@dataclass
class TraceRecord:
    iteration: int
    elbo: float
    seconds: float
    m_alpha: float
    s_alpha: float


@dataclass
class TrainTrace:
    records: List[TraceRecord] = field(default_factory=list)
    evaluations: List[Tuple[int, float]] = field(default_factory=list)
    skipped_natgrad: List[int] = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise DomainError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def elbo(self):
        return np.array([r.elbo for r in self.records])

    @property
    def seconds(self):
        return np.array([r.seconds for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "elbo", "seconds", "m_alpha", "s_alpha"])
            for r in self.records:
                w.writerow([r.iteration, f"{r.elbo:.17g}", f"{r.seconds:.6f}",
                            f"{r.m_alpha:.17g}", f"{r.s_alpha:.17g}"])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(params):
    zeros = jax.tree_util.tree_map(np.zeros_like, params)
    return AdamState(zeros, jax.tree_util.tree_map(np.zeros_like, params), 0)


def adam_step(params, grads, state, hyper=None, maximize=False):
    """One bias-corrected Adam update on a pytree of arrays.

    ``hyper`` holds ``lr``, ``beta1``, ``beta2``, ``eps``.  Descends on
    ``grads`` unless ``maximize`` is set.
    """
    h = {"lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
    h.update(hyper or {})
    t = state.step + 1
    b1, b2 = h["beta1"], h["beta2"]
    sign = 1.0 if maximize else -1.0
    tm = jax.tree_util.tree_map
    m = tm(lambda a, g: b1 * a + (1 - b1) * np.asarray(g), state.m, grads)
    v = tm(lambda a, g: b2 * a + (1 - b2) * np.asarray(g) ** 2, state.v, grads)
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = tm(
        lambda p, mm, vv: np.asarray(p) + sign * h["lr"] * (mm / c1) / (np.sqrt(vv / c2) + h["eps"]),
        params, m, v,
    )
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# natural gradient
# ---------------------------------------------------------------------------


def _inv_spd(P):
    L = sla.cholesky(P, lower=True, check_finite=False)
    Linv = sla.solve_triangular(L, np.eye(P.shape[0]), lower=True, check_finite=False)
    return Linv.T @ Linv


def _kl_step(m_new, S_new, m, S, P):
    """KL( N(m_new, S_new) || N(m, S) ) given the old precision ``P``."""
    d = m_new - m
    sign, logdet_ratio = np.linalg.slogdet(P @ S_new)
    if sign <= 0:
        return np.inf
    return 0.5 * (np.sum(P * S_new) + d @ P @ d - m.size - logdet_ratio)


def natgrad_step(m, S, grad_m, grad_S, gamma, max_kl=None):
    """Natural-gradient ascent step for q(u) = N(m, S).

    Moves the natural parameters ``(S^-1 m, -S^-1 / 2)`` by ``gamma`` times
    the ELBO gradient with respect to the expectation parameters
    ``(m, S + m m^T)``.  The step is halved until the new precision is
    positive definite and, when ``max_kl`` is given, until the new
    distribution lies within ``max_kl`` nats of the old one.

    Returns ``(m_new, S_new, gamma_used)``.
    """
    m = np.asarray(m, dtype=float)
    S = np.asarray(S, dtype=float)
    if gamma == 0:
        return m.copy(), S.copy(), 0.0
    G = 0.5 * (np.asarray(grad_S) + np.asarray(grad_S).T)
    d1 = np.asarray(grad_m) - 2.0 * G @ m
    P = _inv_spd(S)
    theta1 = P @ m
    g = gamma
    for _ in range(MAX_HALVINGS + 1):
        P_new = P - 2.0 * g * G
        P_new = 0.5 * (P_new + P_new.T)
        try:
            S_new = _inv_spd(P_new)
        except (sla.LinAlgError, ValueError):
            g *= 0.5
            continue
        if np.all(np.isfinite(S_new)):
            S_new = 0.5 * (S_new + S_new.T)
            m_new = S_new @ (theta1 + g * d1)
            if max_kl is None or _kl_step(m_new, S_new, m, S, P) <= max_kl:
                return m_new, S_new, g
        g *= 0.5
    raise StepFailed(f"no acceptable natural-gradient step after {MAX_HALVINGS} halvings")


def gamma_schedule(it, gamma):
    """Linear warm-up from 0.01 to ``gamma`` over the first 100 iterations."""
    if it >= WARMUP_ITERS or gamma <= WARMUP_START:
        return gamma
    return WARMUP_START + (gamma - WARMUP_START) * it / WARMUP_ITERS


# ---------------------------------------------------------------------------
# softplus parameterization
# ---------------------------------------------------------------------------


def softplus_inv(c):
    c = np.asarray(c, dtype=float) - POS_FLOOR
    if np.any(c <= 0):
        raise DomainError("value at or below the positivity floor")
    return np.where(c > 30, c, np.log(np.expm1(np.minimum(c, 30))))


def _pos(u):
    return POS_FLOOR + jax.nn.softplus(u)


def _pos_np(u):
    return POS_FLOOR + np.logaddexp(0.0, u)


def _to_free(model, natgrad):
    """Split a model into Adam-driven free parameters and the natgrad block."""
    layers = []
    last = model.n_layers - 1
    for n, layer in enumerate(model.layers):
        lp = {"Z": layer.Z.copy(), "u_sigma2": softplus_inv(layer.kernel.sigma2),
              "u_lam": softplus_inv(layer.kernel.lam)}
        if not (natgrad and n == last):
            lp["m_vec"] = layer.m_vec.copy()
            lp["s_factor"] = layer.s_factor.copy()
        if layer.delta_Z is not None:
            lp["delta_Z"] = layer.delta_Z.copy()
        layers.append(lp)
    free = {"layers": layers, "u_noise": softplus_inv(model.noise_var)}
    if model.alpha_mode == "estimated":
        free["alpha"] = {"m_alpha": np.asarray(model.alpha.m_alpha, dtype=float),
                         "u_s_alpha": softplus_inv(model.alpha.s_alpha)}
    elif model.alpha_mode == "optimized":
        free["alpha"] = {"u_alpha": softplus_inv(model.alpha)}
    return free


def _constrained(free, nat, fixed_alpha):
    """Constrained parameter tree consumed by the ELBO."""
    layers = []
    for n, lp in enumerate(free["layers"]):
        c = {"Z": lp["Z"], "sigma2": _pos(lp["u_sigma2"]), "lam": _pos(lp["u_lam"])}
        if "m_vec" in lp:
            c["m_vec"], c["s_factor"] = lp["m_vec"], lp["s_factor"]
        else:
            c["m_vec"], c["S"] = nat["m_vec"], nat["S"]
        if "delta_Z" in lp:
            c["delta_Z"] = lp["delta_Z"]
        layers.append(c)
    a = free.get("alpha", {})
    if "m_alpha" in a:
        alpha = {"m_alpha": a["m_alpha"], "s_alpha": _pos(a["u_s_alpha"])}
    elif "u_alpha" in a:
        alpha = {"alpha": _pos(a["u_alpha"])}
    else:
        alpha = {"alpha": jnp.asarray(fixed_alpha, dtype=jnp.float64)}
    return {"layers": layers, "noise_var": _pos(free["u_noise"]), "alpha": alpha}


def _objective(free, nat, fixed_alpha, X, y, n_total, eps, alpha_xi, kl_xi, prior, *, mode, nu_code, jitter):
    params = _constrained(free, nat, fixed_alpha)
    return inference.elbo_terms(
        params, X, y, n_total, eps, alpha_xi, kl_xi, prior, mode=mode, nu_code=nu_code, jitter=jitter
    )["elbo"]


_train_grad = jax.jit(
    jax.value_and_grad(_objective, argnums=(0, 1)), static_argnames=("mode", "nu_code", "jitter")
)


def _from_free(model, free, nat):
    """Write free parameters (and the natgrad block) back into a new model."""
    layers = []
    for n, (layer, lp) in enumerate(zip(model.layers, free["layers"])):
        lam = _pos_np(np.asarray(lp["u_lam"]))
        lam = float(lam) if np.ndim(lam) == 0 else lam
        spec = MaternSpec(nu=layer.kernel.nu, lam=lam, sigma2=float(_pos_np(lp["u_sigma2"])))
        if "m_vec" in lp:
            m_vec, s_factor = np.asarray(lp["m_vec"]), np.tril(np.asarray(lp["s_factor"]))
        else:
            m_vec = np.asarray(nat["m_vec"])
            s_factor = sla.cholesky(np.asarray(nat["S"]), lower=True, check_finite=False)
        dz = np.asarray(lp["delta_Z"]) if "delta_Z" in lp else None
        layers.append(LayerState(np.asarray(lp["Z"]), m_vec, s_factor, spec, dz))
    a = free.get("alpha", {})
    if model.alpha_mode == "estimated":
        alpha = replace(model.alpha, m_alpha=float(a["m_alpha"]), s_alpha=float(_pos_np(a["u_s_alpha"])))
    elif model.alpha_mode == "optimized":
        alpha = float(_pos_np(a["u_alpha"]))
    else:
        alpha = model.alpha
    return DgpModel(layers, model.alpha_mode, alpha, float(_pos_np(free["u_noise"])),
                    model.jitter, model.input_scaling)


def _alpha_snapshot(free, model):
    a = free.get("alpha", {})
    if "m_alpha" in a:
        return float(a["m_alpha"]), float(_pos_np(a["u_s_alpha"]))
    if "u_alpha" in a:
        return float(_pos_np(a["u_alpha"])), 0.0
    return float(model.alpha), 0.0


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def batch_stream(n, batch_size, rng):
    """Yield index batches: a fresh permutation per epoch, remainder dropped."""
    b = min(batch_size, n)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - b + 1, b):
            yield np.sort(perm[start:start + b])


def initial_model(X, y, config):
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    return init_model(
        X, y, n_layers=config.n_layers, num_inducing=config.num_inducing,
        rng=np.random.default_rng(seeds[0]), alpha_mode=config.alpha_mode,
        alpha_init=config.alpha_init, alpha_prior=config.alpha_prior, nu=config.nu,
        lengthscale=config.lengthscale, ard=config.ard, jitter=config.jitter,
    )


def _check_finite(tree, what):
    for leaf in jax.tree_util.tree_leaves(tree):
        if not np.all(np.isfinite(leaf)):
            raise FactorizationFailed(f"non-finite {what}")


def train(X, y, config=None, model=None, callback=None):
    """Fit a DGP by doubly stochastic variational inference.

    Parameters
    ----------
    X, y : array_like
        Design (``n x d``) and responses.
    config : TrainConfig
    model : DgpModel, optional
        Starting point; by default a model is initialized from ``config``.
    callback : callable, optional
        Called as ``callback(iteration, free_params, natural_state)`` after
        each step; ``natural_state`` holds the last layer's ``m_vec`` and ``S``
        when natural gradients are on and is empty otherwise.

    Returns
    -------
    model : DgpModel
    trace : TrainTrace

    On failure the raised exception carries the partial trace as ``.trace``.
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0] or y.size == 0:
        raise DomainError("X and y must be non-empty with matching rows")
    n = X.shape[0]
    if config.batch_size is not None and config.batch_size > n:
        raise DomainError("batch_size exceeds the number of data points")
    if model is None:
        model = initial_model(X, y, config)
    trace = TrainTrace()
    if config.n_iters == 0:
        return model, trace

    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    batches = batch_stream(n, config.batch_size or n, rng)
    use_nat = config.natgrad
    free = _to_free(model, use_nat)
    last = model.layers[-1]
    nat = {"m_vec": last.m_vec.copy(), "S": last.s} if use_nat else {}
    nat_kl_cap = None if config.natgrad_max_kl is None else config.natgrad_max_kl * last.m_vec.size
    adam = adam_init(free)
    hyper = {"lr": config.lr, "beta1": config.beta1, "beta2": config.beta2, "eps": config.adam_eps}
    static = inference.static_args(model)
    prior = inference.alpha_prior(model)
    fixed_alpha = model.alpha if model.alpha_mode == "fixed" else 0.0
    eval_noise = None
    if config.eval_every:
        eval_noise = inference.draw_noise(np.random.default_rng(config.seed), inference.REPORT_T,
                                          model.n_layers, n, inference.REPORT_S)
    t0 = time.perf_counter()
    try:
        for it in range(1, config.n_iters + 1):
            idx = next(batches)
            noise = inference.draw_noise(rng, config.T, model.n_layers, idx.size, config.S)
            value, (g_free, g_nat) = _train_grad(
                free, nat, fixed_alpha, X[idx], y[idx], float(n), noise.eps,
                noise.alpha_xi, noise.kl_xi, prior, **static,
            )
            value = float(value)
            if not np.isfinite(value):
                raise FactorizationFailed(f"non-finite ELBO at iteration {it}")
            g_free = jax.tree_util.tree_map(np.asarray, g_free)
            _check_finite(g_free, f"gradient at iteration {it}")
            if use_nat:
                g_m, g_S = np.asarray(g_nat["m_vec"]), np.asarray(g_nat["S"])
                _check_finite((g_m, g_S), f"gradient at iteration {it}")
                try:
                    m_new, S_new, _ = natgrad_step(nat["m_vec"], nat["S"], g_m, g_S,
                                                   gamma_schedule(it, config.gamma),
                                                   nat_kl_cap)
                except StepFailed:
                    # a single-draw gradient spike; keep q(u_N) for this iteration
                    trace.skipped_natgrad.append(it)
                    if len(trace.skipped_natgrad) >= MAX_SKIPPED_STEPS and \
                            trace.skipped_natgrad[-MAX_SKIPPED_STEPS] == it - MAX_SKIPPED_STEPS + 1:
                        raise
                else:
                    nat = {"m_vec": m_new, "S": S_new}
            free, adam = adam_step(free, g_free, adam, hyper, maximize=True)
            for lp in free["layers"]:
                if "s_factor" in lp:
                    lp["s_factor"] = np.tril(lp["s_factor"])
            m_a, s_a = _alpha_snapshot(free, model)
            trace.append(TraceRecord(it, value, time.perf_counter() - t0, m_a, s_a))
            if eval_noise is not None and it % config.eval_every == 0:
                cur = _from_free(model, free, nat)
                est = inference.elbo_minibatch(cur, X, y, noise=eval_noise)
                trace.evaluations.append((it, est.value))
            if callback is not None:
                callback(it, free, nat)
    except (FactorizationFailed, StepFailed, np.linalg.LinAlgError) as exc:
        if not isinstance(exc, (FactorizationFailed, StepFailed)):
            exc = FactorizationFailed(str(exc))
        exc.trace = trace
        raise exc
    return _from_free(model, free, nat), trace
