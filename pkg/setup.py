"""Build the optional compiled covariance kernels.

The package works without them: ``dgpemu._backend`` falls back to the NumPy
implementation when the extension is missing.  Set ``DGPEMU_NO_EXT=1`` to skip
compilation entirely.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("DGPEMU_NO_EXT"):
    from Cython.Build import cythonize

    exts = [
        Extension(
            "dgpemu._ckernels",
            ["src/dgpemu/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-fopenmp"],
            extra_link_args=["-fopenmp"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(exts, language_level=3)

setup(ext_modules=ext_modules)
