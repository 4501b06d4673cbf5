"""Numba acceleration switch.

The hot geometric kernels (farthest point sampling, SOR neighbor
statistics) have two implementations: a numba ``@njit`` version and a
pure-numpy fallback. The fallback is used when numba is not importable
or when the environment variable ``FEATBACK_NUMBA`` is set to ``0``.
"""

import os
import warnings

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def identity(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return identity

    warnings.warn("numba not installed; falling back to pure-numpy kernels")

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("FEATBACK_NUMBA", "1") != "0"
