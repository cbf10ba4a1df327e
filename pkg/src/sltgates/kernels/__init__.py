"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``SLT_NUMBA`` is set to ``0``. The selection happens once at import.
Both implementations are importable directly as ``numpy_impl`` and
``numba_impl`` (the latter is ``None`` without numba) for testing and
benchmarking.
"""

import logging
import os

from . import _numpy as numpy_impl

logger = logging.getLogger(__name__)

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_want_numba = os.environ.get("SLT_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

if _want_numba and numba_impl is not None:
    impl = numba_impl
    BACKEND = "numba"
else:
    if _want_numba:
        logger.warning("numba unavailable, falling back to numpy kernels")
    impl = numpy_impl
    BACKEND = "numpy"

clamp01 = impl.clamp01
clamp01_grad = impl.clamp01_grad
relu_grad = impl.relu_grad
normal_cdf = impl.normal_cdf
normal_pdf = impl.normal_pdf
softmax_xent = impl.softmax_xent
im2col = impl.im2col
col2im = impl.col2im
maxpool2d = impl.maxpool2d
maxpool2d_grad = impl.maxpool2d_grad
adam_update = impl.adam_update

__all__ = [
    "BACKEND", "numpy_impl", "numba_impl",
    "clamp01", "clamp01_grad", "relu_grad", "normal_cdf", "normal_pdf",
    "softmax_xent", "im2col", "col2im", "maxpool2d", "maxpool2d_grad",
    "adam_update",
]
