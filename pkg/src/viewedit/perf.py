"""Runtime allocator tuning for large-array training loops.

The editor working set cycles many multi-MB temporaries; keeping them on the
heap instead of per-allocation mmap avoids page zeroing and measurably
speeds up training. No-op on platforms without glibc mallopt.
"""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator(threshold: int = 1 << 30) -> bool:
    global _done
    if _done:
        return True
    try:
        name = ctypes.util.find_library("c") or "libc.so.6"
        libc = ctypes.CDLL(name)
        ok1 = libc.mallopt(_M_MMAP_THRESHOLD, threshold)
        ok2 = libc.mallopt(_M_TRIM_THRESHOLD, threshold)
        _done = bool(ok1 and ok2)
    except (OSError, AttributeError):
        _done = False
    return _done
