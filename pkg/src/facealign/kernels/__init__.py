"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
fallback is always available. `FACEALIGN_BACKEND=python|native` forces a
choice (forcing `native` raises if the extension is missing).

Each backend is bit-deterministic on repeated calls. Across backends,
`im2col` and the pooling kernels agree bit-exactly; `col2im_add` may differ
at float rounding level because the scatter-add accumulation order differs.
"""

import os

from . import _numpy

_requested = os.environ.get("FACEALIGN_BACKEND", "").lower()

if _requested == "python":
    _impl = _numpy
else:
    try:
        from . import _native as _impl
    except ImportError:
        if _requested == "native":
            raise
        _impl = _numpy

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im_add = _impl.col2im_add
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward

__all__ = [
    "BACKEND",
    "im2col",
    "col2im_add",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
]
