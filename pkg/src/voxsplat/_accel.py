"""Kernel acceleration switch.

Hot inner loops (pixel compositing, ray marching) are written as plain
Python-over-numpy functions and jitted with numba by default.  Setting
``VOXSPLAT_NO_NUMBA=1`` in the environment before import selects the
un-jitted fallback path, which computes identical results (slowly); the
benchmark in ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

USE_NUMBA = os.environ.get("VOXSPLAT_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    from numba import njit, prange
else:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

    prange = range
