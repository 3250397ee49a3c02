"""Kernel backend selection: numba-jitted loops or vectorized numpy.

The hot inner loops (pulse simulation, resonance-check shots, charge-bath
ensembles, coincidence histogramming) exist in two implementations: a
scalar loop compiled with numba's ``@njit`` and a vectorized pure-numpy
twin.  The active path is chosen once at import time:

* ``SPECDIFF_BACKEND=numba``  -> jitted kernels (default when numba imports)
* ``SPECDIFF_BACKEND=numpy``  -> vectorized fallback, no compilation

Both paths consume identical counter-based random draws, so they produce
the same event streams up to last-ulp differences in transcendental
functions (numpy's SIMD log/exp may differ from libm by one ulp).  Integer
outputs agree exactly; see tests/test_backends.py.
"""

import os

_requested = os.environ.get("SPECDIFF_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"SPECDIFF_BACKEND={_requested!r} not understood (use 'numba' or 'numpy')"
    )

HAS_NUMBA = False
if _requested != "numpy":
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise RuntimeError(
                "SPECDIFF_BACKEND=numba requested but numba is not installed"
            )

USE_NUMBA = HAS_NUMBA and _requested != "numpy"

if USE_NUMBA:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """No-op stand-in so kernel modules import cleanly without numba."""

        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return wrap


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
