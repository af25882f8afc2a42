"""Process-wide monotonic nanosecond clock shared by every module."""

from __future__ import annotations

import time

_EPOCH_NS = time.monotonic_ns()


def now_ns() -> int:
    """Nanoseconds since this process imported the package."""
    return time.monotonic_ns() - _EPOCH_NS
