"""Numba switch.

Set ``CFIDENT_NUMBA=0`` in the environment before import to run every hot
kernel on its pure-numpy path instead.  Numba is also skipped silently when
it is not installed.
"""
import os

ENV_FLAG = "CFIDENT_NUMBA"


def _wanted() -> bool:
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


try:
    if not _wanted():
        raise ImportError
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
