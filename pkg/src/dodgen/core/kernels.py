"""Backend selection for the convolution gather kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``DODGEN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_ref

BACKEND = "python"
im2col = _kernels_ref.im2col
col2im = _kernels_ref.col2im

if os.environ.get("DODGEN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        _ext = None
    if _ext is not None:
        BACKEND = "cython"
        im2col = _ext.im2col
        col2im = _ext.col2im
