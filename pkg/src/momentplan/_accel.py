"""JIT switch.

Set ``MOMENTPLAN_DISABLE_JIT=1`` to force the pure-numpy kernels even when
numba is importable.
"""
import os

_disabled = os.environ.get("MOMENTPLAN_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is an optional extra
    _nb = None

HAS_NUMBA = _nb is not None
USE_NUMBA = HAS_NUMBA and not _disabled


def njit(fn):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if _nb is None:
        return fn
    return _nb.njit(cache=True)(fn)
