import numpy as np
import pytest

from dgpemu.kernels import MaternSpec
from dgpemu.model import AlphaPosterior, DgpModel, LayerState


def random_layer(rng, m, d=1, stationary=True, lam=0.4, sigma2=1.3, nu=2.5, s_scale=0.3):
    Z = rng.random((m, d))
    A = np.tril(rng.normal(size=(m, m))) * s_scale
    A[np.diag_indices(m)] = np.abs(A[np.diag_indices(m)]) + 0.05
    return LayerState(
        Z=Z,
        m_vec=rng.normal(size=m),
        s_factor=A,
        kernel=MaternSpec(nu=nu, lam=lam, sigma2=sigma2),
        delta_Z=None if stationary else rng.normal(size=m),
    )


def random_model(rng, n_layers=2, m=3, d=1, mode="estimated", noise_var=0.05):
    layers = [random_layer(rng, m, d, stationary=(n == 0)) for n in range(n_layers)]
    if mode == "estimated":
        alpha = AlphaPosterior(m_alpha=1.2, s_alpha=0.3, prior_mean=3.5, prior_var=1.0)
    else:
        alpha = 0.8
    return DgpModel(layers, mode, alpha, noise_var)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def stationary_gp_data(seed, n=100, lam=0.2, noise_sd=0.05):
    """1-d draw from a stationary Matern-5/2 GP at uniform inputs, plus noise."""
    from dgpemu.kernels import gram

    rng = np.random.default_rng(seed)
    X = np.sort(rng.random(n))[:, None]
    K = gram(X, X, kernel=MaternSpec(nu=2.5, lam=lam, sigma2=1.0)) + 1e-8 * np.eye(n)
    y = np.linalg.cholesky(K) @ rng.standard_normal(n) + noise_sd * rng.standard_normal(n)
    return X, y


def step_data(seed, n=100, noise_sd=0.05):
    """The 1-d step function at uniform inputs, plus noise."""
    from dgpemu.synthetic import step1d

    rng = np.random.default_rng(seed)
    X = np.sort(rng.random(n))[:, None]
    return X, step1d(X[:, 0]) + noise_sd * rng.standard_normal(n)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
