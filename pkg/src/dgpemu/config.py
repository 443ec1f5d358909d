"""TOML run configuration with [data], [model], [train] and [predict] tables."""
import copy
import os
import sys

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from dgpemu.errors import ParseError, SchemaError
from dgpemu.trainer import TrainConfig

DEFAULTS = {
    "data": {"train": "", "target": "y", "na_as_zero": False, "scale": True},
    "model": {
        "n_layers": 2,
        "num_inducing": 200,
        "nu": 2.5,
        "lengthscale": 0.2,
        "ard": True,
        "jitter": 1e-6,
        "alpha_mode": "estimated",
        "alpha_init": [3.0, 1.0],
        "alpha_prior": [3.5, 1.0],
    },
    "train": {
        "n_iters": 5000,
        "batch_size": 0,  # 0: full batch
        "lr": 0.01,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "gamma": 0.1,
        "T": 1,
        "S": 1,
        "seed": 0,
        "natgrad": True,
        "natgrad_max_kl": 0.1,  # nats per inducing variable; 0 disables the trust region
        "eval_every": 0,
    },
    "predict": {"samples": 5000, "seed": 0, "include_noise": False},
}


def _merge(user):
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in user.items():
        if section not in cfg:
            raise SchemaError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ParseError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in cfg[section]:
                raise SchemaError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = value
    return cfg


def load_config(path):
    """Parse a config file and fill defaults; relative paths are resolved."""
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    cfg = _merge(user)
    train_path = cfg["data"]["train"]
    if not train_path:
        raise SchemaError("[data] train is required")
    if not os.path.isabs(train_path):
        cfg["data"]["train"] = os.path.normpath(
            os.path.join(os.path.dirname(os.path.abspath(path)), train_path)
        )
    train_config(cfg)  # validate early
    return cfg


def train_config(cfg):
    m, t = cfg["model"], cfg["train"]
    alpha_init = m["alpha_init"]
    if m["alpha_mode"] != "estimated" and isinstance(alpha_init, list):
        alpha_init = alpha_init[0]
    return TrainConfig(
        n_iters=int(t["n_iters"]),
        batch_size=int(t["batch_size"]) or None,
        lr=float(t["lr"]),
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        adam_eps=float(t["adam_eps"]),
        gamma=float(t["gamma"]),
        T=int(t["T"]),
        S=int(t["S"]),
        seed=int(t["seed"]),
        alpha_mode=m["alpha_mode"],
        alpha_init=tuple(alpha_init) if isinstance(alpha_init, list) else float(alpha_init),
        alpha_prior=tuple(m["alpha_prior"]),
        num_inducing=int(m["num_inducing"]),
        n_layers=int(m["n_layers"]),
        nu=float(m["nu"]),
        lengthscale=float(m["lengthscale"]),
        ard=bool(m["ard"]),
        jitter=float(m["jitter"]),
        natgrad=bool(t["natgrad"]),
        natgrad_max_kl=float(t["natgrad_max_kl"]) or None,
        eval_every=int(t["eval_every"]),
    )


def dump_config(cfg, path):
    with open(path, "wb") as fh:
        tomli_w.dump(cfg, fh)
