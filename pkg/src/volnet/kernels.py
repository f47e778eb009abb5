"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_kernels_py`` take over. Set
``VOLNET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

_py = _kernels_py

if os.environ.get("VOLNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _py
        BACKEND = "python"

im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
maxpool3d_forward = _impl.maxpool3d_forward
maxpool3d_backward = _impl.maxpool3d_backward


def backends():
    """Available backends by name, for benchmarks and cross-checks."""
    found = {"python": _py}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
