"""Numba dispatch for the hot kernels.

The compiled path is on by default when numba imports cleanly; set
``MASKEDIT_NUMBA=0`` to force the pure-numpy fallbacks (the "reference
mode" used for bitwise-reproducibility guarantees). The flag is read once
at import time.
"""

from __future__ import annotations

import os


def _env_flag(name: str, default: bool) -> bool:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off")


NUMBA_REQUESTED = _env_flag("MASKEDIT_NUMBA", True)

if NUMBA_REQUESTED:
    try:
        from numba import njit  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USING_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA

if not USING_NUMBA:
    def njit(*args, **kwargs):  # type: ignore[no-redef]
        # No-op stand-in so kernel sources stay importable without numba.
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap
