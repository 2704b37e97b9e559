"""Convolution kernel backends.

The compiled Cython core is preferred; the numpy implementation is the
drop-in fallback when the extension is not built. Set OMNIPLACE_KERNELS
to "cython" or "numpy" to force one (forcing an unavailable backend
raises). ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _numpy

try:
    from . import _conv
except ImportError:
    _conv = None

_FORCED = os.environ.get("OMNIPLACE_KERNELS", "").strip().lower()

if _FORCED in ("numpy", "np", "python"):
    _impl = _numpy
elif _FORCED in ("cython", "cy", "c"):
    if _conv is None:
        raise ImportError("OMNIPLACE_KERNELS=cython but the compiled extension is missing")
    _impl = _conv
elif _FORCED:
    raise ImportError(f"unknown OMNIPLACE_KERNELS value {_FORCED!r}")
else:
    _impl = _conv if _conv is not None else _numpy

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel


def available_backends():
    """Name -> module for every importable backend."""
    table = {"numpy": _numpy}
    if _conv is not None:
        table["cython"] = _conv
    return table
