"""Backend selection for the hot kernels.

Set ``MACG_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The numba
kernels are used otherwise, when numba imports cleanly.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("MACG_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; a no-op decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
