"""Numba switch.

Set ``RETMATCH_NUMBA=0`` to run every kernel through its pure-numpy path.
Both paths are kept bit-compatible so results never depend on the flag.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("RETMATCH_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
