"""Backend selection for the hot numeric kernels.

The env var LOOPLEARN_KERNELS picks the implementation:
  auto   (default) numba if importable, else pure numpy
  numba  require the numba backend, fail if unavailable
  numpy  force the pure-numpy fallback

Both backends compute identical quantities; they differ only in floating
point summation order (agreement to ~1e-12 relative).
"""

import os

from . import numpy_impl

_choice = os.environ.get("LOOPLEARN_KERNELS", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"LOOPLEARN_KERNELS must be auto|numba|numpy, got {_choice!r}")

if _choice in ("auto", "numba"):
    try:
        from . import numba_impl as _impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"
else:
    _impl = numpy_impl
    BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
