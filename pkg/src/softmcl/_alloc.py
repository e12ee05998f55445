"""glibc allocator tuning.

Every autodiff op allocates fresh arrays of a few hundred KB.  With glibc
defaults each one is served by mmap and touched page by page, which costs
more than the arithmetic.  Raising the mmap/trim thresholds keeps those
blocks on the heap.
"""

import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune():
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 64 << 20) and libc.mallopt(_M_TRIM_THRESHOLD, 256 << 20)
    except (OSError, AttributeError):
        return False
    return bool(ok)
