"""Kernel backend selection: numba-jitted loops or plain numpy.

The recurrent kernels in :mod:`empathia.kernels` are written once as numpy
functions and optionally compiled with numba. The active backend is chosen
from the ``EMPATHIA_NUMBA`` environment variable at import time ("0" disables
numba) and can be overridden at runtime with :func:`set_backend`, which the
benchmark and the kernel-agreement tests use.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_env = os.environ.get("EMPATHIA_NUMBA", "1").strip().lower()
_backend = "numba" if (HAVE_NUMBA and _env not in ("0", "false", "off")) else "numpy"


def jit(fn):
    """Compile ``fn`` with numba when available, otherwise return it as-is."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def set_backend(name):
    """Force the kernel backend to ``"numba"`` or ``"numpy"``."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _backend = name


def get_backend():
    return _backend


def using_numba():
    return _backend == "numba"
