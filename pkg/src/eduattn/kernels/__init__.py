"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is preferred; set ``EDUATTN_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the one in use.
"""

import os

from eduattn.kernels import _pykernels

if os.environ.get("EDUATTN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from eduattn.kernels import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

sparsemax_rows = _impl.sparsemax_rows
sparsemax_rows_backward = _impl.sparsemax_rows_backward
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward

__all__ = ["BACKEND", "sparsemax_rows", "sparsemax_rows_backward", "gru_forward", "gru_backward"]
