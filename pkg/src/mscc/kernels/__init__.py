"""Hot-kernel dispatch.

The package ships two interchangeable kernel sets: numba-jitted loops and a
pure-numpy fallback. Selection happens once, at import, from the
``MSCC_BACKEND`` environment variable:

  MSCC_BACKEND=numba   require numba (ImportError if missing)
  MSCC_BACKEND=numpy   force the pure-numpy path
  unset / auto         numba when importable, numpy otherwise

``benchmarks/bench_kernels.py`` times the two sets against each other.
"""

import os

from . import numpy_backend

_KERNEL_NAMES = [
    "conv2d_fwd",
    "conv2d_bwd_input",
    "conv2d_bwd_kernel",
    "maxpool2x2_fwd",
    "maxpool2x2_bwd",
    "upconv2x2_fwd",
    "upconv2x2_bwd_input",
    "upconv2x2_bwd_kernel",
    "crf_kernel_matrix",
    "crf_message_truncated",
    "dilate_chebyshev",
]


def _select():
    choice = os.environ.get("MSCC_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"MSCC_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return numpy_backend, "numpy"
    try:
        from . import numba_backend
        return numba_backend, "numba"
    except ImportError:
        if choice == "numba":
            raise
        return numpy_backend, "numpy"


_impl, ACTIVE_BACKEND = _select()

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_input = _impl.conv2d_bwd_input
conv2d_bwd_kernel = _impl.conv2d_bwd_kernel
maxpool2x2_fwd = _impl.maxpool2x2_fwd
maxpool2x2_bwd = _impl.maxpool2x2_bwd
upconv2x2_fwd = _impl.upconv2x2_fwd
upconv2x2_bwd_input = _impl.upconv2x2_bwd_input
upconv2x2_bwd_kernel = _impl.upconv2x2_bwd_kernel
crf_kernel_matrix = _impl.crf_kernel_matrix
crf_message_truncated = _impl.crf_message_truncated
dilate_chebyshev = _impl.dilate_chebyshev

__all__ = _KERNEL_NAMES + ["ACTIVE_BACKEND"]
