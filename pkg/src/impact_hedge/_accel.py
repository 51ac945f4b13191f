"""Backend selection for the compiled kernels.

Set ``IMPACT_HEDGE_NUMBA=0`` to force the pure-numpy fallback path. When numba
is missing the fallback is used silently.
"""
import os
import warnings

_FLAG = os.environ.get("IMPACT_HEDGE_NUMBA", "1").strip().lower()

# old system TBB builds trigger a harmless fallback warning on first parallel use
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compilation is lazy, so decorating is cheap even when the numpy path is the
    one selected at runtime.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


prange = numba.prange if HAVE_NUMBA else range


def set_threads(n):
    """Set the numba worker count; a no-op without numba."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
