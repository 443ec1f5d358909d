"""Select the covariance assembly implementation at import time.

The compiled extension is preferred.  Setting ``DGPEMU_PURE_PYTHON=1`` in the
environment forces the NumPy fallback.
"""
import os

from dgpemu import _pykernels

python_impl = _pykernels
try:
    from dgpemu import _ckernels as compiled_impl
except ImportError:  # extension not built
    compiled_impl = None

if compiled_impl is not None and not os.environ.get("DGPEMU_PURE_PYTHON"):
    impl = compiled_impl
else:
    impl = python_impl

COMPILED = impl is compiled_impl

stat_cross = impl.stat_cross
nonstat_cross = impl.nonstat_cross
matern = impl.matern
