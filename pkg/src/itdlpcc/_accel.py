"""Kernel dispatch between numba-compiled and interpreted implementations.

Hot loops (range coding, nearest-neighbour search) are written once as plain
Python over numpy arrays. When numba is importable they are compiled with
``njit``; setting ``ITDLPCC_DISABLE_NUMBA=1`` forces the interpreted path.
Both paths run the same arithmetic, so their outputs are bit-identical.
"""

from __future__ import annotations

import functools
import os

try:
    import numba
    from numba.extending import register_jitable
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

    def register_jitable(fn):
        return fn


def _env_disabled() -> bool:
    value = os.environ.get("ITDLPCC_DISABLE_NUMBA", "")
    return value.strip().lower() not in ("", "0", "false", "no")


NUMBA_AVAILABLE = numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE and not _env_disabled()

jitable = register_jitable


class Kernel:
    """A kernel with an interpreted body and a lazily compiled numba twin."""

    def __init__(self, fn):
        functools.update_wrapper(self, fn)
        self.py = fn
        self._jit = None

    @property
    def jit(self):
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba is not installed")
        if self._jit is None:
            self._jit = numba.njit(cache=True)(self.py)
        return self._jit

    def __call__(self, *args):
        if NUMBA_ENABLED:
            return self.jit(*args)
        return self.py(*args)


def kernel(fn) -> Kernel:
    return Kernel(fn)
