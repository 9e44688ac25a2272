"""Hot kernels: compiled Cython core with a pure-numpy fallback.

The compiled module is used when it imports; set ``PNRTOMO_PURE_PYTHON=1``
to force the fallback. Both produce bit-identical results.
"""

import os

from . import _pykernels

BACKEND = "python"
composition_sum = _pykernels.composition_sum
dead_time_scan = _pykernels.dead_time_scan

if os.environ.get("PNRTOMO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        composition_sum = _ckernels.composition_sum
        dead_time_scan = _ckernels.dead_time_scan

__all__ = ["BACKEND", "composition_sum", "dead_time_scan"]
