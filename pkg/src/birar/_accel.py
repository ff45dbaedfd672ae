"""Numba dispatch.

Hot kernels are written twice: a numba ``@njit`` loop version and a
vectorised numpy version. ``BIRAR_DISABLE_NUMBA=1`` (or numba missing)
selects the numpy path everywhere.
"""

import os

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _numba_njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return decorator


def numba_enabled() -> bool:
    flag = os.environ.get("BIRAR_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True`` by default."""
    kwargs.setdefault("cache", True)
    return _numba_njit(*args, **kwargs)


def select(jit_impl, numpy_impl):
    """Pick an implementation according to the current environment flag."""
    return jit_impl if numba_enabled() else numpy_impl
