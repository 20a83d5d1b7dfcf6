"""Numba acceleration layer with a pure-NumPy fallback.

Every hot kernel in :mod:`swarmrescue.kernels` is written as plain Python
over NumPy arrays and decorated with :func:`maybe_njit`.  By default the
kernels are JIT-compiled with numba; setting ``SWARMRESCUE_DISABLE_NUMBA=1``
(or if numba is not importable) runs the identical source uncompiled, which
is slow but produces bit-identical results.
"""

import functools
import os

import numpy as np

_flag = os.environ.get("SWARMRESCUE_DISABLE_NUMBA", "").strip().lower()
DISABLED = _flag in ("1", "true", "yes", "on")

try:
    if DISABLED:
        raise ImportError("numba disabled by SWARMRESCUE_DISABLE_NUMBA")
    from numba import njit as _njit
    from numba import prange

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False
    prange = range


def maybe_njit(**options):
    """Return ``numba.njit(**options)`` or a fallback pass-through decorator.

    The fallback wraps calls in ``np.errstate(over="ignore")`` because the
    counter-based RNG in the kernels relies on uint64 wraparound, which is
    silent under numba but warns under plain NumPy.
    """
    if NUMBA_ENABLED:
        options.setdefault("cache", True)
        return _njit(**options)

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            with np.errstate(over="ignore"):
                return fn(*args, **kwargs)

        wrapper.py_func = fn
        return wrapper

    return decorate
