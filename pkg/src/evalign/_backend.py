"""Kernel selection: the compiled ``_core`` extension when importable, else numpy.

Set ``EVALIGN_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("EVALIGN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        kernels = _core
        BACKEND = "cython"


def get_kernels(name=None):
    """Return the kernel namespace for ``name`` ("cython"/"python"), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
