"""Hot loops of the tensor engine.

Two interchangeable implementations live side by side: ``_numba`` (default)
and ``_numpy``. Set ``LITENEXT_KERNELS=numpy`` before import to force the
pure-numpy path; if numba cannot be imported the numpy path is used too.
"""
import logging
import os

log = logging.getLogger(__name__)

_requested = os.environ.get("LITENEXT_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"LITENEXT_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, falling back to numpy kernels")
        from . import _numpy as _impl

        BACKEND = "numpy"
else:
    from . import _numpy as _impl

    BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
dwconv_forward = _impl.dwconv_forward
dwconv_backward = _impl.dwconv_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
box_filter = _impl.box_filter

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "dwconv_forward",
    "dwconv_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "box_filter",
]
