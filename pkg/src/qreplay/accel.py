"""Optional numba acceleration for loop-heavy kernels.

Hot kernels (cyclic Jacobi sweeps, fused Adam updates, CBP unit scans) have
two implementations: a numba ``@njit`` version and a pure-numpy fallback.
Selection happens once at import time:

* if numba is importable and the environment variable ``QREPLAY_NO_NUMBA``
  is unset (or "0"), the jitted versions are used;
* otherwise the numpy fallbacks run.

Both paths perform the same scalar operations in the same order, so results
are bit-identical; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os


def _noop_jit(*args, **kwargs):
    # Mirrors numba.njit's decorator-with-arguments form.
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _numba_available()
NUMBA_DISABLED = os.environ.get("QREPLAY_NO_NUMBA", "0") not in ("0", "")
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED

if USE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit
