"""Deep Gaussian process emulators with a learnable smoothness parameter.

The top-level names are resolved lazily so that ``import dgpemu`` (and the
command line) does not pay for importing JAX until training is needed.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "MaternSpec": "kernels",
    "NonStatKernel": "kernels",
    "gram": "kernels",
    "DgpModel": "model",
    "LayerState": "model",
    "AlphaPosterior": "model",
    "load_model": "model",
    "save_model": "model",
    "forward_sample": "model",
    "TrainConfig": "trainer",
    "train": "trainer",
    "predict_samples": "predict",
    "summarize": "predict",
    "nse": "metrics",
    "coverage": "metrics",
    "diagnose": "diagnose",
    "load_csv": "data",
    "Dataset": "data",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(f"dgpemu.{_EXPORTS[name]}")
        return getattr(module, name)
    raise AttributeError(f"module 'dgpemu' has no attribute {name!r}")


def __dir__():
    return __all__
