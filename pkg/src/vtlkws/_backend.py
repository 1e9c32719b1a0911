"""Select the kernel implementation at import time."""
import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if not os.environ.get("VTLKWS_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

frame_signal = kernels.frame_signal
apply_filterbanks_log = kernels.apply_filterbanks_log
