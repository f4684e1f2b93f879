"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
twin is loaded.  Setting ``DPPSNN_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("DPPSNN_BACKEND", "").lower() == "python":
    impl = _kernels_py
else:
    try:
        from . import _kernels as impl
    except ImportError:
        impl = _kernels_py

BACKEND: str = impl.BACKEND
potentials = impl.potentials
potentials_backward = impl.potentials_backward
thin_hidden = impl.thin_hidden
pathwise = impl.pathwise


def backends() -> dict:
    """All importable backends keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
