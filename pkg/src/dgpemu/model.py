"""DGP state and the layer-conditional Gaussians with inducing variables integrated out.

Layer 1 is a stationary GP; every deeper layer uses the non-stationary kernel
whose length scales come from the previous layer's values at the data and from
the free anchor vector ``delta_Z`` at the inducing inputs.  For a batch of
inputs the marginal of layer ``n`` given the previous layer is

    mean_i = k(Z, x_i)^T K^{-1} m
    var_i  = k(x_i, x_i) - k(Z, x_i)^T K^{-1} (K - S) K^{-1} k(Z, x_i)

with ``K = k(Z, Z)`` and ``q(u) = N(m, S)``.  Only the diagonal is formed.
"""
import json
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import linalg as sla
from scipy.cluster.vq import kmeans2

from dgpemu.errors import DimMismatch, DomainError
from dgpemu.kernels import MaternSpec, gram, nonstat_cross
from dgpemu.linalg import cholesky_psd

FORMAT_VERSION = 1
ALPHA_MODES = ("estimated", "optimized", "fixed")
VAR_FLOOR = 1e-12
DEFAULT_JITTER = 1e-6


@dataclass
class LayerState:
    """Inducing inputs, variational moments and kernel of one hidden layer."""

    Z: np.ndarray
    m_vec: np.ndarray
    s_factor: np.ndarray
    kernel: MaternSpec
    delta_Z: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.m_vec = np.asarray(self.m_vec, dtype=float).reshape(-1)
        self.s_factor = np.tril(np.asarray(self.s_factor, dtype=float))
        m = self.Z.shape[0]
        if m < 1 or self.m_vec.shape != (m,) or self.s_factor.shape != (m, m):
            raise DomainError(
                f"inconsistent layer shapes: Z {self.Z.shape}, m {self.m_vec.shape}, "
                f"s_factor {self.s_factor.shape}"
            )
        if self.delta_Z is not None:
            self.delta_Z = np.asarray(self.delta_Z, dtype=float).reshape(-1)
            if self.delta_Z.shape != (m,):
                raise DomainError(f"delta_Z must have length {m}")

    @property
    def num_inducing(self):
        return self.Z.shape[0]

    @property
    def is_stationary(self):
        return self.delta_Z is None

    @property
    def s(self):
        return self.s_factor @ self.s_factor.T


@dataclass
class AlphaPosterior:
    """q(alpha) = N(m_alpha, s_alpha) with prior N(prior_mean, prior_var)."""

    m_alpha: float = 3.0
    s_alpha: float = 1.0
    prior_mean: float = 3.5
    prior_var: float = 1.0

    def __post_init__(self):
        if not (self.s_alpha > 0 and self.prior_var > 0):
            raise DomainError("alpha variances must be positive")


@dataclass
class DgpModel:
    """A covariance-modelling DGP with ``len(layers)`` hidden layers.

    ``alpha`` is an :class:`AlphaPosterior` in ``estimated`` mode and a plain
    float in ``optimized`` and ``fixed`` modes.
    """

    layers: List[LayerState]
    alpha_mode: str
    alpha: Union[AlphaPosterior, float]
    noise_var: float
    jitter: float = DEFAULT_JITTER
    input_scaling: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.layers:
            raise DomainError("a DGP needs at least one layer")
        if self.alpha_mode not in ALPHA_MODES:
            raise DomainError(f"alpha_mode must be one of {ALPHA_MODES}")
        if (self.alpha_mode == "estimated") != isinstance(self.alpha, AlphaPosterior):
            raise DomainError("alpha must be an AlphaPosterior exactly in estimated mode")
        if self.alpha_mode != "estimated":
            self.alpha = float(self.alpha)
        if not self.layers[0].is_stationary:
            raise DomainError("layer 1 must not carry delta_Z")
        if any(layer.is_stationary for layer in self.layers[1:]):
            raise DomainError("layers 2..N need delta_Z")
        dims = {layer.Z.shape[1] for layer in self.layers}
        if len(dims) != 1:
            raise DomainError("all layers must share the input dimension")
        if not self.noise_var > 0:
            raise DomainError("noise_var must be positive")

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].Z.shape[1]

    def alpha_point(self):
        """Posterior mean of alpha (or the scalar value)."""
        return self.alpha.m_alpha if self.alpha_mode == "estimated" else self.alpha


# ---------------------------------------------------------------------------
# conditionals
# ---------------------------------------------------------------------------


@dataclass
class LayerFactors:
    """Quantities shared by every input point for a fixed layer and alpha."""

    chol: np.ndarray  # factor of k(Z, Z) + jitter
    a: np.ndarray  # K^{-1} m
    B: np.ndarray  # K^{-1} (K - S) K^{-1}
    applied_jitter: float


def inducing_gram(layer, alpha=None, jitter=DEFAULT_JITTER):
    """k(Z, Z) for the layer, including the base nugget ``jitter * sigma2``."""
    Z = layer.Z
    if layer.is_stationary:
        K = gram(Z, Z, kernel=layer.kernel)
    else:
        K = nonstat_cross(Z, Z, layer.delta_Z, layer.delta_Z, alpha, layer.kernel)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += jitter * layer.kernel.sigma2
    return K


def layer_factors(layer, alpha=None, jitter=DEFAULT_JITTER):
    K = inducing_gram(layer, alpha, jitter)
    L, applied = cholesky_psd(K, jitter * layer.kernel.sigma2)
    a = sla.cho_solve((L, True), layer.m_vec, check_finite=False)
    Linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
    K_inv = Linv.T @ Linv
    W = K_inv @ layer.s_factor
    B = K_inv - W @ W.T
    return LayerFactors(L, a, 0.5 * (B + B.T), applied)


def cross_covariance(x_batch, layer, f_prev=None, alpha=None):
    """k(x_i, Z) as a b x m matrix."""
    if layer.is_stationary:
        return gram(x_batch, layer.Z, kernel=layer.kernel)
    return nonstat_cross(x_batch, layer.Z, f_prev, layer.delta_Z, alpha, layer.kernel)


def moments_from_cross(Kxz, factors, sigma2, floor=True):
    mean = Kxz @ factors.a
    var = sigma2 - np.einsum("ij,ij->i", Kxz @ factors.B, Kxz)
    if floor:
        var = np.maximum(var, VAR_FLOOR)
    return mean, var


def _check_batch(x_batch, layer):
    x = np.asarray(x_batch, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if layer.Z.shape[1] == 1 else x[None, :]
    if x.shape[1] != layer.Z.shape[1]:
        raise DimMismatch(f"inputs have {x.shape[1]} columns, layer expects {layer.Z.shape[1]}")
    return x


def layer1_conditional(x_batch, layer, jitter=DEFAULT_JITTER, floor=True):
    """Mean and variance of the stationary first layer at each input."""
    if not layer.is_stationary:
        raise DomainError("layer1_conditional needs a stationary layer")
    x = _check_batch(x_batch, layer)
    factors = layer_factors(layer, jitter=jitter)
    return moments_from_cross(cross_covariance(x, layer), factors, layer.kernel.sigma2, floor)


def layern_conditional(x_batch, f_prev, layer, alpha, jitter=DEFAULT_JITTER, floor=True):
    """Mean and variance of a non-stationary layer given previous-layer values."""
    if layer.is_stationary:
        raise DomainError("layern_conditional needs a layer with delta_Z")
    x = _check_batch(x_batch, layer)
    f_prev = np.asarray(f_prev, dtype=float).reshape(-1)
    if f_prev.shape[0] != x.shape[0]:
        raise DomainError("f_prev must have one value per input row")
    factors = layer_factors(layer, alpha, jitter)
    Kxz = cross_covariance(x, layer, f_prev, alpha)
    return moments_from_cross(Kxz, factors, layer.kernel.sigma2, floor)


def sample_layer(mean, var_diag, eps):
    var_diag = np.asarray(var_diag, dtype=float)
    if np.any(var_diag < 0):
        raise DomainError("variances must be non-negative")
    return np.asarray(mean, dtype=float) + np.asarray(eps, dtype=float) * np.sqrt(var_diag)


def draw_alpha(model, rng):
    if model.alpha_mode == "estimated":
        q = model.alpha
        return q.m_alpha + np.sqrt(q.s_alpha) * rng.standard_normal()
    return model.alpha


def forward_sample(x_batch, model, rng=None, eps=None, alpha=None):
    """One joint draw through every layer with a single alpha draw.

    ``eps`` (shape ``(n_layers, b)``) and ``alpha`` override the random draws.
    Returns the final-layer values and the alpha used.
    """
    x = _check_batch(x_batch, model.layers[0])
    rng = np.random.default_rng(rng)
    if alpha is None:
        alpha = draw_alpha(model, rng)
    if eps is None:
        eps = rng.standard_normal((model.n_layers, x.shape[0]))
    eps = np.asarray(eps, dtype=float).reshape(model.n_layers, x.shape[0])
    f = None
    for n, layer in enumerate(model.layers):
        if n == 0:
            mean, var = layer1_conditional(x, layer, model.jitter)
        else:
            mean, var = layern_conditional(x, f, layer, alpha, model.jitter)
        f = sample_layer(mean, var, eps[n])
    return f, alpha


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_inducing(X, m, rng):
    """k-means++ centres of the design (the design itself when m >= n)."""
    X = np.asarray(X, dtype=float)
    if m >= X.shape[0]:
        return X.copy()
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centres, _ = kmeans2(X, m, minit="++", seed=rng)
    return centres


def init_model(
    X,
    y,
    n_layers=2,
    num_inducing=50,
    rng=None,
    alpha_mode="estimated",
    alpha_init=(3.0, 1.0),
    alpha_prior=(3.5, 1.0),
    nu=2.5,
    lengthscale=0.2,
    ard=True,
    noise_var=None,
    s_init=1e-2,
    jitter=DEFAULT_JITTER,
):
    """Initial model: Z from k-means++, m = 0, S = s_init^2 I, delta_Z = 0.

    ``alpha_init`` is ``(mean, variance)`` in estimated mode and a scalar
    otherwise.  The last layer's variance starts at the output variance.
    """
    rng = np.random.default_rng(rng)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    d = X.shape[1]
    y_var = float(np.var(y)) if y.size > 1 and np.var(y) > 0 else 1.0
    Z = init_inducing(X, num_inducing, rng)
    m = Z.shape[0]
    layers = []
    for n in range(n_layers):
        last = n == n_layers - 1
        lam = np.full(d, lengthscale) if (n == 0 and ard) else lengthscale
        spec = MaternSpec(nu=nu, lam=lam, sigma2=y_var if last else 1.0)
        layers.append(
            LayerState(
                Z=Z.copy(),
                m_vec=np.zeros(m),
                s_factor=s_init * np.eye(m),
                kernel=spec,
                delta_Z=None if n == 0 else np.zeros(m),
            )
        )
    if alpha_mode == "estimated":
        mean, var = alpha_init
        alpha = AlphaPosterior(float(mean), float(var), *map(float, alpha_prior))
    else:
        alpha = float(np.atleast_1d(alpha_init)[0])
    noise = 1e-2 * y_var if noise_var is None else float(noise_var)
    return DgpModel(layers, alpha_mode, alpha, noise, jitter)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _spec_to_dict(spec):
    lam = spec.lam.tolist() if spec.ard else spec.lam
    return {"nu": spec.nu, "lam": lam, "sigma2": spec.sigma2}


def _spec_from_dict(d):
    lam = d["lam"]
    return MaternSpec(nu=float(d["nu"]), lam=np.asarray(lam) if isinstance(lam, list) else lam,
                      sigma2=float(d["sigma2"]))


def model_to_dict(model):
    layers = []
    for layer in model.layers:
        layers.append(
            {
                "Z": layer.Z.tolist(),
                "m_vec": layer.m_vec.tolist(),
                "s_factor": layer.s_factor.tolist(),
                "delta_Z": None if layer.delta_Z is None else layer.delta_Z.tolist(),
                "kernel": _spec_to_dict(layer.kernel),
            }
        )
    if model.alpha_mode == "estimated":
        q = model.alpha
        alpha = {
            "m_alpha": q.m_alpha,
            "s_alpha": q.s_alpha,
            "prior_mean": q.prior_mean,
            "prior_var": q.prior_var,
        }
    else:
        alpha = model.alpha
    scaling = None
    if model.input_scaling is not None:
        scaling = {k: np.asarray(v).tolist() for k, v in model.input_scaling.items()}
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "n_layers": model.n_layers,
        "alpha_mode": model.alpha_mode,
        "alpha": alpha,
        "noise_var": model.noise_var,
        "jitter": model.jitter,
        "input_scaling": scaling,
        "layers": layers,
    }


def model_from_dict(doc):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DomainError(f"unsupported model format version {version!r}")
    layers = [
        LayerState(
            Z=np.asarray(l["Z"], dtype=float),
            m_vec=np.asarray(l["m_vec"], dtype=float),
            s_factor=np.asarray(l["s_factor"], dtype=float),
            kernel=_spec_from_dict(l["kernel"]),
            delta_Z=None if l["delta_Z"] is None else np.asarray(l["delta_Z"], dtype=float),
        )
        for l in doc["layers"]
    ]
    mode = doc["alpha_mode"]
    alpha = AlphaPosterior(**doc["alpha"]) if mode == "estimated" else float(doc["alpha"])
    scaling = doc.get("input_scaling")
    if scaling is not None:
        scaling = {k: np.asarray(v, dtype=float) for k, v in scaling.items()}
    model = DgpModel(layers, mode, alpha, float(doc["noise_var"]), float(doc["jitter"]), scaling)
    if model.input_dim != doc["input_dim"] or model.n_layers != doc["n_layers"]:
        raise DomainError("model document header disagrees with its layers")
    return model


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
