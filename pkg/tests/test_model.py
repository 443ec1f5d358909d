import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_layer, random_model
from dgpemu.errors import DimMismatch, DomainError
from dgpemu.kernels import MaternSpec, NonStatKernel, gram
from dgpemu.model import (
    AlphaPosterior,
    DgpModel,
    LayerState,
    forward_sample,
    init_model,
    layer1_conditional,
    layern_conditional,
    load_model,
    model_from_dict,
    model_to_dict,
    sample_layer,
    save_model,
)


def mc_marginal(x, layer, rng, n_draws, f_prev=None, alpha=None):
    """Sample u ~ q(u), then f | u from the exact GP conditional."""
    Z, m = layer.Z, layer.m_vec
    if layer.is_stationary:
        Kzz = gram(Z, Z, kernel=layer.kernel)
        Kzx = gram(Z, x, kernel=layer.kernel)
        kxx = np.full(x.shape[0], layer.kernel.sigma2)
    else:
        k = NonStatKernel(layer.kernel, alpha, x.shape[1])
        Kzz = gram(Z, Z, layer.delta_Z, layer.delta_Z, k)
        Kzx = gram(Z, x, layer.delta_Z, f_prev, k)
        kxx = np.full(x.shape[0], layer.kernel.sigma2)
    Kzz = Kzz + 1e-6 * layer.kernel.sigma2 * np.eye(Z.shape[0])
    W = np.linalg.solve(Kzz, Kzx)  # m x b
    cond_var = kxx - np.sum(Kzx * W, axis=0)
    u = m + rng.standard_normal((n_draws, Z.shape[0])) @ layer.s_factor.T
    f = u @ W + rng.standard_normal((n_draws, x.shape[0])) * np.sqrt(np.maximum(cond_var, 0))
    return f


def assert_moments_match(f, mean, var, n_se=4.0):
    n = f.shape[0]
    emp_mean = f.mean(axis=0)
    emp_var = f.var(axis=0, ddof=1)
    se_mean = np.sqrt(emp_var / n)
    se_var = np.std((f - emp_mean) ** 2, axis=0) / np.sqrt(n)
    assert np.all(np.abs(emp_mean - mean) < n_se * se_mean), (emp_mean, mean, se_mean)
    assert np.all(np.abs(emp_var - var) < n_se * se_var), (emp_var, var, se_var)


class TestLayerConditionals:
    def test_interpolates_inducing_input(self, rng):
        layer = random_layer(rng, 4)
        layer.s_factor = np.zeros((4, 4))
        mean, var = layer1_conditional(layer.Z[2:3], layer, jitter=1e-12)
        assert mean[0] == pytest.approx(layer.m_vec[2], abs=1e-6)
        assert var[0] < 1e-6

    def test_prior_recovered(self, rng):
        layer = random_layer(rng, 5, d=2)
        K = gram(layer.Z, layer.Z, kernel=layer.kernel)
        layer.m_vec = np.zeros(5)
        layer.s_factor = np.linalg.cholesky(K + 1e-6 * layer.kernel.sigma2 * np.eye(5))
        x = rng.random((7, 2))
        mean, var = layer1_conditional(x, layer)
        assert_allclose(mean, 0.0, atol=1e-12)
        assert_allclose(var, layer.kernel.sigma2, rtol=1e-8)

    def test_prior_recovered_nonstationary(self, rng):
        layer = random_layer(rng, 5, d=1, stationary=False)
        k = NonStatKernel(layer.kernel, 1.5, 1)
        K = gram(layer.Z, layer.Z, layer.delta_Z, layer.delta_Z, k)
        layer.m_vec = np.zeros(5)
        layer.s_factor = np.linalg.cholesky(K + 1e-6 * layer.kernel.sigma2 * np.eye(5))
        x = rng.random((6, 1))
        mean, var = layern_conditional(x, rng.normal(size=6), layer, 1.5)
        assert_allclose(mean, 0.0, atol=1e-12)
        assert_allclose(var, layer.kernel.sigma2, rtol=1e-8)

    def test_alpha_zero_matches_stationary(self, rng):
        layer = random_layer(rng, 4, stationary=False)
        flat = LayerState(layer.Z, layer.m_vec, layer.s_factor, layer.kernel)
        x = rng.random((9, 1))
        a = layern_conditional(x, rng.normal(size=9), layer, 0.0)
        b = layer1_conditional(x, flat)
        assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-14)
        assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-14)

    def test_nonstationary_interpolation(self, rng):
        layer = random_layer(rng, 3, stationary=False)
        layer.s_factor = np.zeros((3, 3))
        mean, var = layern_conditional(layer.Z, layer.delta_Z, layer, 2.0, jitter=1e-12)
        assert_allclose(mean, layer.m_vec, atol=1e-5)
        assert np.all(var < 1e-5)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("stationary", [True, False])
    def test_monte_carlo_marginalization(self, seed, stationary):
        rng = np.random.default_rng(seed)
        m, b = int(rng.integers(2, 4)), int(rng.integers(1, 3))
        layer = random_layer(rng, m, stationary=stationary)
        x = rng.random((b, 1))
        if stationary:
            mean, var = layer1_conditional(x, layer)
            f = mc_marginal(x, layer, rng, 10**6)
        else:
            f_prev, alpha = rng.normal(size=b), 1.5
            mean, var = layern_conditional(x, f_prev, layer, alpha)
            f = mc_marginal(x, layer, rng, 10**6, f_prev, alpha)
        assert_moments_match(f, mean, var)

    def test_raw_variance_not_negative(self, rng):
        layer = random_layer(rng, 6, d=2)
        x = rng.random((200, 2))
        _, var = layer1_conditional(x, layer, floor=False)
        assert var.min() >= -1e-8

    def test_wrong_layer_type(self, rng):
        with pytest.raises(DomainError):
            layer1_conditional(np.zeros((1, 1)), random_layer(rng, 2, stationary=False))
        with pytest.raises(DomainError):
            layern_conditional(np.zeros((1, 1)), [0.0], random_layer(rng, 2), 1.0)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            layer1_conditional(np.zeros((3, 2)), random_layer(rng, 2, d=1))


class TestSampleLayer:
    def test_examples(self):
        assert_array_equal(sample_layer([1.0, 2.0], [4.0, 9.0], [0.0, 0.0]), [1.0, 2.0])
        assert_array_equal(sample_layer([1.0], [0.0], [3.0]), [1.0])
        assert_array_equal(sample_layer([2.0], [9.0], [1.0]), [5.0])

    def test_negative_variance(self):
        with pytest.raises(DomainError):
            sample_layer([0.0], [-1.0], [0.0])


class TestForwardSample:
    def test_single_layer(self, rng):
        model = random_model(rng, n_layers=1)
        x = rng.random((5, 1))
        eps = rng.normal(size=(1, 5))
        f, _ = forward_sample(x, model, eps=eps)
        mean, var = layer1_conditional(x, model.layers[0], model.jitter)
        assert_array_equal(f, sample_layer(mean, var, eps[0]))

    def test_reproducible(self):
        model = random_model(np.random.default_rng(0), n_layers=3)
        x = np.linspace(0, 1, 7)[:, None]
        a = forward_sample(x, model, np.random.default_rng(5))
        b = forward_sample(x, model, np.random.default_rng(5))
        assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_deterministic_composition(self, rng):
        model = random_model(rng, n_layers=3)
        for layer in model.layers:
            layer.s_factor = np.zeros_like(layer.s_factor)
        x = np.array([[0.37]])
        f, _ = forward_sample(x, model, eps=np.zeros((3, 1)), alpha=1.1)
        g, _ = layer1_conditional(x, model.layers[0], model.jitter)
        for layer in model.layers[1:]:
            g, _ = layern_conditional(x, g, layer, 1.1, model.jitter)
        assert_array_equal(f, g)


class TestDgpModel:
    def test_mode_checks(self, rng):
        layers = [random_layer(rng, 2), random_layer(rng, 2, stationary=False)]
        with pytest.raises(DomainError):
            DgpModel(layers, "estimated", 1.0, 0.1)
        with pytest.raises(DomainError):
            DgpModel(layers, "fixed", AlphaPosterior(), 0.1)
        with pytest.raises(DomainError):
            DgpModel(layers, "bogus", 1.0, 0.1)
        with pytest.raises(DomainError):
            DgpModel(layers[::-1], "fixed", 1.0, 0.1)
        with pytest.raises(DomainError):
            DgpModel(layers, "fixed", 1.0, 0.0)

    def test_layer_shapes(self):
        with pytest.raises(DomainError):
            LayerState(np.zeros((3, 1)), np.zeros(2), np.eye(3), MaternSpec())
        with pytest.raises(DomainError):
            LayerState(np.zeros((3, 1)), np.zeros(3), np.eye(3), MaternSpec(), delta_Z=np.zeros(2))

    def test_init_model(self, rng):
        X = rng.random((60, 2))
        y = np.sin(6 * X[:, 0])
        model = init_model(X, y, n_layers=3, num_inducing=10, rng=0)
        assert model.n_layers == 3 and model.input_dim == 2
        assert model.layers[0].is_stationary
        assert all(not layer.is_stationary for layer in model.layers[1:])
        for layer in model.layers:
            assert_array_equal(layer.m_vec, 0.0)
            assert_allclose(layer.s_factor, 1e-2 * np.eye(10))
        assert_array_equal(model.layers[1].delta_Z, 0.0)
        assert_array_equal(model.layers[1].Z, model.layers[0].Z)
        assert model.layers[0].kernel.ard
        assert model.layers[-1].kernel.sigma2 == pytest.approx(np.var(y))
        assert model.alpha.m_alpha == 3.0 and model.alpha.prior_mean == 3.5


class TestPersistence:
    @pytest.mark.parametrize("mode", ["estimated", "fixed"])
    def test_round_trip(self, tmp_path, mode):
        model = random_model(np.random.default_rng(2), n_layers=2, m=4, d=2, mode=mode)
        model.input_scaling = {"lo": np.array([0.0, -1.0]), "hi": np.array([2.0, 1.0])}
        path = tmp_path / "m.json"
        save_model(model, path)
        back = load_model(path)
        for a, b in zip(model.layers, back.layers):
            assert_array_equal(a.Z, b.Z)
            assert_array_equal(a.m_vec, b.m_vec)
            assert_array_equal(a.s_factor, b.s_factor)
            assert a.kernel == b.kernel
        assert back.alpha == model.alpha
        assert back.noise_var == model.noise_var
        assert_array_equal(back.input_scaling["lo"], [0.0, -1.0])
        save_model(back, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_self_describing(self):
        doc = model_to_dict(random_model(np.random.default_rng(3)))
        text = json.dumps(doc)
        assert json.loads(text)["format_version"] == 1
        assert {"input_dim", "n_layers", "alpha_mode", "noise_var", "layers"} <= set(doc)

    def test_version_checked(self):
        doc = model_to_dict(random_model(np.random.default_rng(3)))
        doc["format_version"] = 99
        with pytest.raises(DomainError):
            model_from_dict(doc)
