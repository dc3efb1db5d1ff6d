"""Backend selection for the convolution kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``GMMFILL_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "numpy"
im2col = _fallback.im2col
col2im = _fallback.col2im

if os.environ.get("GMMFILL_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        im2col = _ckernels.im2col
        col2im = _ckernels.col2im
