"""Inner propagation loop, JIT-compiled with numba when available.

The whole horizon runs inside one compiled call: per-step Python/numpy
dispatch overhead alone would dwarf the sub-microsecond step budget of
small compiled systems.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def run_steps(values0, table, target, coeff, req, fact, out):  # pragma: no cover - numba
    """Evaluate the moment recursion for table.shape[0] steps.

    out[t] is the moment state at step t; fact holds per-term factor indices
    padded with -1.  Returns (step, moment index) of the first non-finite
    value, or (-1, -1) on success.
    """
    n = values0.shape[0]
    n_steps = table.shape[0]
    n_terms = target.shape[0]
    max_f = fact.shape[1]
    for j in range(n):
        out[0, j] = values0[j]
    for t in range(n_steps):
        for j in range(n):
            out[t + 1, j] = 0.0
        for k in range(n_terms):
            v = coeff[k] * table[t, req[k]]
            for fi in range(max_f):
                idx = fact[k, fi]
                if idx >= 0:
                    v *= out[t, idx]
            out[t + 1, target[k]] += v
        for j in range(n):
            if not np.isfinite(out[t + 1, j]):
                return t + 1, j
    return -1, -1
