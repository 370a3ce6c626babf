"""Backend selection for the hot numeric kernels.

Set ``SYNTHLOGS_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful
for debugging and on platforms without numba).
"""

import os

_DISABLED = os.environ.get("SYNTHLOGS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator.

    Kernels decorated with this are still valid Python, only slow; the
    dispatchers in :mod:`synthlogs.kernels` route to vectorized numpy
    implementations instead when numba is off.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
