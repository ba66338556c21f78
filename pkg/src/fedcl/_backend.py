"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy versions in ``_pykernels`` take over. ``FEDCL_PURE_PYTHON=1`` forces the
fallback, which is how the benchmark and the cross-backend tests reach it.
"""
import os

from . import _pykernels

python_kernels = _pykernels
compiled_kernels = None

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and not os.environ.get("FEDCL_PURE_PYTHON"):
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"
