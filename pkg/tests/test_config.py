import pytest

from dgpemu.config import DEFAULTS, dump_config, load_config, train_config
from dgpemu.errors import ParseError, SchemaError


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_defaults_filled(tmp_path):
    cfg = load_config(write(tmp_path, '[data]\ntrain = "d.csv"\n'))
    assert cfg["model"] == DEFAULTS["model"]
    assert cfg["data"]["train"] == str(tmp_path / "d.csv")
    tc = train_config(cfg)
    assert tc.num_inducing == 200 and tc.n_layers == 2 and tc.batch_size is None
    assert tc.alpha_init == (3.0, 1.0) and tc.alpha_prior == (3.5, 1.0)


def test_named_model_keys(tmp_path):
    text = ('[data]\ntrain = "/abs/d.csv"\n'
            '[model]\nn_layers = 3\nnum_inducing = 50\nnu = 1.5\nalpha_mode = "fixed"\nalpha_init = 1.0\n'
            '[train]\nT = 4\nS = 2\nbatch_size = 100\nseed = 7\nnatgrad_max_kl = 0\n'
            '[predict]\nsamples = 100\n')
    cfg = load_config(write(tmp_path, text))
    tc = train_config(cfg)
    assert cfg["data"]["train"] == "/abs/d.csv"
    assert (tc.n_layers, tc.num_inducing, tc.nu, tc.T, tc.S, tc.batch_size, tc.seed) == (3, 50, 1.5, 4, 2, 100, 7)
    assert tc.alpha_mode == "fixed" and tc.alpha_init == 1.0
    assert tc.natgrad_max_kl is None
    assert cfg["predict"]["samples"] == 100


def test_round_trip(tmp_path):
    cfg = load_config(write(tmp_path, '[data]\ntrain = "d.csv"\n[train]\nn_iters = 12\n'))
    dump_config(cfg, tmp_path / "echo.toml")
    assert load_config(tmp_path / "echo.toml") == cfg


@pytest.mark.parametrize("text, err", [
    ("[data]\ntrain = ", ParseError),
    ('[data]\ntrain = "d.csv"\n[extra]\na = 1\n', SchemaError),
    ('[data]\ntrain = "d.csv"\n[model]\nbogus = 1\n', SchemaError),
    ("[model]\nn_layers = 2\n", SchemaError),
])
def test_rejected(tmp_path, text, err):
    with pytest.raises(err):
        load_config(write(tmp_path, text))


def test_invalid_values_caught_early(tmp_path):
    with pytest.raises(Exception):
        load_config(write(tmp_path, '[data]\ntrain = "d.csv"\n[train]\ngamma = 2.0\n'))
