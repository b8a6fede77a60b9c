"""Numba/numpy backend selection.

The hot kernels in :mod:`finom._kernels` are written as plain Python
functions over numpy arrays and compiled with ``numba.njit`` when numba
is importable.  Setting the environment variable ``FINOM_DISABLE_NUMBA``
to ``1`` (or ``true``) before import, or calling :func:`set_numba_enabled`
at runtime, routes every kernel through the uncompiled numpy fallback
instead.  Both routes produce bitwise-identical results for the pure
recursions; the fallback exists so the package works without a compiler
toolchain and so the benchmark can measure what the compilation buys.
"""

import os
import warnings

_env = os.environ.get("FINOM_DISABLE_NUMBA", "0").strip().lower()
_DISABLED_BY_ENV = _env in ("1", "true", "yes", "on")

try:
    import numba

    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    _NUMBA_AVAILABLE = False

_numba_enabled = _NUMBA_AVAILABLE and not _DISABLED_BY_ENV


def numba_available():
    """Return True if numba could be imported."""
    return _NUMBA_AVAILABLE


def numba_enabled():
    """Return True if compiled kernels are currently selected."""
    return _numba_enabled


def set_numba_enabled(flag):
    """Select the compiled (True) or plain numpy (False) kernel route.

    Requesting the compiled route when numba is not installed emits a
    warning and keeps the fallback.
    """
    global _numba_enabled
    if flag and not _NUMBA_AVAILABLE:
        warnings.warn("numba is not installed; keeping the numpy fallback kernels")
        _numba_enabled = False
        return
    _numba_enabled = bool(flag)


def jit(func):
    """Compile ``func`` with njit when numba is available, else return it unchanged.

    Compilation is unconditional here; per-call routing between the
    compiled and plain variants happens in :mod:`finom._kernels`.
    """
    if not _NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True, fastmath=False)(func)
