"""Backend selection for the convolution kernels.

The compiled extension is preferred; set ``FACEDEPTH_PURE_PYTHON=1`` to force
the numpy fallback.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

BACKEND = "python"
im2col = _pykernels.im2col
col2im = _pykernels.col2im

if not os.environ.get("FACEDEPTH_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
    else:
        BACKEND = "cython"
        im2col = _ckernels.im2col
        col2im = _ckernels.col2im


def backend_module(name: str):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
