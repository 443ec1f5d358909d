import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_model
from dgpemu.errors import DimMismatch, DomainError
from dgpemu.model import AlphaPosterior, layer1_conditional, layern_conditional
from dgpemu.predict import PredictiveSummary, predict_samples, read_predictions, summarize, write_predictions
from dgpemu.synthetic import piecewise2d
from dgpemu.trainer import TrainConfig, train


class TestSummarize:
    def test_constant_column(self):
        s = summarize(np.full((10, 2), 3.25))
        assert_array_equal(s.mean, 3.25)
        assert_array_equal(s.variance, 0.0)
        assert_array_equal(s.lower, 3.25)
        assert_array_equal(s.upper, 3.25)

    def test_one_to_hundred(self):
        s = summarize(np.arange(1.0, 101.0)[:, None])
        assert s.lower[0] == pytest.approx(3.475, abs=1e-12)
        assert s.upper[0] == pytest.approx(97.525, abs=1e-12)
        assert s.mean[0] == 50.5
        assert s.variance[0] == pytest.approx(np.var(np.arange(1, 101), ddof=1))

    def test_standard_normal(self):
        z = np.random.default_rng(0).standard_normal(10**6)
        s = summarize(z)
        assert s.lower[0] == pytest.approx(-1.959964, abs=0.01)
        assert s.upper[0] == pytest.approx(1.959964, abs=0.01)

    def test_too_few_samples(self):
        with pytest.raises(DomainError):
            summarize(np.zeros((1, 3)))

    def test_keep_samples(self):
        samples = np.random.default_rng(1).normal(size=(5, 2))
        assert_array_equal(summarize(samples, keep_samples=True).samples, samples)
        assert summarize(samples).samples is None

    def test_summary_invariants(self):
        with pytest.raises(DomainError):
            PredictiveSummary(np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1))
        with pytest.raises(DomainError):
            PredictiveSummary(np.zeros(1), -np.ones(1), np.zeros(1), np.ones(1))


class ZeroNormals(np.random.Generator):
    """Generator whose normal draws are all exactly zero."""

    def __init__(self):
        super().__init__(np.random.PCG64(0))

    def standard_normal(self, size=None, *args, **kwargs):
        return np.zeros(size)


class TestPredictSamples:
    def test_collapsed_model_is_deterministic(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, n_layers=3, m=3)
        model.alpha = AlphaPosterior(m_alpha=1.3, s_alpha=1e-300, prior_mean=3.5, prior_var=1.0)
        x = rng.random((4, 1))
        a = predict_samples(x, model, R=1, rng=ZeroNormals())
        g, _ = layer1_conditional(x, model.layers[0], model.jitter)
        for layer in model.layers[1:]:
            g, _ = layern_conditional(x, g, layer, 1.3, model.jitter)
        assert_allclose(a[0], g, rtol=1e-12)

    def test_reproducible(self):
        model = random_model(np.random.default_rng(1))
        x = np.linspace(0, 1, 6)[:, None]
        assert_array_equal(predict_samples(x, model, 20, rng=7), predict_samples(x, model, 20, rng=7))
        assert not np.array_equal(predict_samples(x, model, 20, rng=7), predict_samples(x, model, 20, rng=8))

    def test_single_layer_mean(self):
        model = random_model(np.random.default_rng(2), n_layers=1, m=3)
        x = np.array([[0.1], [0.5], [0.9]])
        samples = predict_samples(x, model, 10**5, rng=3)
        mean, var = layer1_conditional(x, model.layers[0], model.jitter)
        se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
        assert np.all(np.abs(samples.mean(axis=0) - mean) < 4 * se)
        assert_allclose(samples.var(axis=0), var, rtol=0.02)

    def test_noise_flag_widens(self):
        model = random_model(np.random.default_rng(3), n_layers=1, noise_var=0.5)
        x = np.array([[0.4]])
        latent = predict_samples(x, model, 20_000, rng=0).var()
        noisy = predict_samples(x, model, 20_000, rng=0, include_noise=True).var()
        assert noisy == pytest.approx(latent + 0.5, rel=0.05)

    def test_alpha_uncertainty_propagates(self):
        model = random_model(np.random.default_rng(4), m=3)
        x = np.array([[0.3], [0.7]])
        wide = predict_samples(x, model, 4000, rng=0).var(axis=0)
        model.alpha = AlphaPosterior(model.alpha.m_alpha, 1e-300, 3.5, 1.0)
        narrow = predict_samples(x, model, 4000, rng=0).var(axis=0)
        assert not np.allclose(wide, narrow)

    def test_checks(self):
        model = random_model(np.random.default_rng(5))
        with pytest.raises(DomainError):
            predict_samples(np.zeros((2, 1)), model, 0)
        with pytest.raises(DimMismatch):
            predict_samples(np.zeros((2, 3)), model, 2)


class TestPredictionFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        x = rng.random((5, 2))
        s = summarize(rng.normal(size=(50, 5)))
        path = tmp_path / "pred.csv"
        write_predictions(path, x, s)
        header = path.read_text().splitlines()[0]
        assert header == "x1,x2,mean,var,lo95,hi95"
        x2, s2 = read_predictions(path)
        assert_array_equal(x2, x)
        for name in ("mean", "variance", "lower", "upper"):
            assert_array_equal(getattr(s2, name), getattr(s, name))

    def test_named_columns(self, tmp_path):
        s = summarize(np.ones((3, 1)) * [[1.0], [2.0], [3.0]])
        write_predictions(tmp_path / "p.csv", np.array([[0.5]]), s, columns=["mass"])
        assert (tmp_path / "p.csv").read_text().startswith("mass,mean")


@pytest.mark.slow
def test_interval_endpoints_converge_in_r():
    """Endpoints at R=5000 and R=50000 differ by under 0.5% of the predictive sd."""
    g = np.linspace(0, 1, 15)
    X = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    model, _ = train(X, piecewise2d(X), TrainConfig(n_iters=500, num_inducing=30, seed=0))
    xs = np.random.default_rng(1).random((20, 2))
    a = summarize(predict_samples(xs, model, 5_000, rng=2))
    b = summarize(predict_samples(xs, model, 50_000, rng=3))
    sd = np.sqrt(b.variance)
    gap = np.maximum(np.abs(a.lower - b.lower), np.abs(a.upper - b.upper)) / sd
    print(f"max endpoint gap / sd = {gap.max():.4f}, median = {np.median(gap):.4f}")
    assert np.all(gap < 0.005)
