"""Numba backend toggle.

Hot kernels are written as nopython-compatible numpy functions and compiled
with numba when available. Setting the environment variable POCHAOS_JIT=0
keeps them as plain Python, which is useful for debugging and for the
backend benchmark. Both paths execute the same source, and numba's
``np.random.Generator`` support makes them bit-identical.
"""

import os

JIT_ENABLED = os.environ.get("POCHAOS_JIT", "1").lower() not in ("0", "false", "off")

if JIT_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        JIT_ENABLED = False


def compile_kernel(func):
    """Return the compiled version of ``func``, or ``func`` unchanged when the
    jit backend is off."""
    if JIT_ENABLED:
        return _njit(cache=True)(func)
    return func
