"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``OCCMATCH_PURE_PYTHON=1``) the numpy fallback is used. Both expose
``lap_solve``, ``ray_hits`` and ``window_reaches`` with identical semantics.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("OCCMATCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

lap_solve = _impl.lap_solve
ray_hits = _impl.ray_hits
window_reaches = _impl.window_reaches


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython"/"python"), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
