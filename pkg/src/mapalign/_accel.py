"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``MAPALIGN_DISABLE_NUMBA=1`` to force the numpy path (useful when
debugging, or on platforms without an llvmlite wheel).
"""
import os

_FLAG = "MAPALIGN_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    Compilation is always attempted when numba exists, so the benchmark can
    compare both paths regardless of the env flag; the flag only controls
    which implementation the public functions dispatch to.
    """
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return _numba.njit(*args, **kwargs)
