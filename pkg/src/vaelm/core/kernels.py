"""Backend selection for the LSTM sequence kernels.

The compiled extension is used when it imports; set ``VAELM_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _lstm_py

BACKEND = "python"
if os.environ.get("VAELM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lstm_ext as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _lstm_py
else:
    _impl = _lstm_py

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
