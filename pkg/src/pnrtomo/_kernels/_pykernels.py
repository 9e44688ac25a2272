"""Pure-numpy fallback kernels.

Results are bit-identical to the compiled versions: products are formed in
the same left-to-right order and sums are sequential (``np.cumsum``), never
pairwise.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def _compositions(m):
    """All (i, j, k, l) with i+j+k+l == m, in nested-loop lexicographic order."""
    rows = [
        (i, j, k, m - i - j - k)
        for i in range(m + 1)
        for j in range(m - i + 1)
        for k in range(m - i - j + 1)
    ]
    idx = np.array(rows, dtype=np.intp).reshape(-1, 4)
    idx.setflags(write=False)
    return idx


def composition_sum(y, m):
    y = np.ascontiguousarray(y, dtype=np.float64)
    idx = _compositions(int(m))
    terms = y[0, idx[:, 0]] * y[1, idx[:, 1]]
    terms = terms * y[2, idx[:, 2]]
    terms = terms * y[3, idx[:, 3]]
    return float(np.cumsum(terms)[-1])


def dead_time_scan(clicks, dead_time, smart):
    clicks = np.asarray(clicks, dtype=np.uint8)
    n = clicks.shape[0]
    dead_time = int(dead_time)
    if smart:
        # Every gated pulse sees an all-ready detector; a click anywhere
        # holds the gate closed for dead_time further pulses.
        outcomes = clicks.sum(axis=1, dtype=np.int64)
        fired = int(np.count_nonzero(outcomes[:-1])) if n else 0
        return outcomes, n + dead_time * fired

    # Branches recover independently when every pulse is gated.
    outcomes = np.zeros(n, dtype=np.int64)
    for b in range(4):
        next_ready = 0
        for t in np.flatnonzero(clicks[:, b]).tolist():
            if t >= next_ready:
                outcomes[t] += 1
                next_ready = t + dead_time + 1
    return outcomes, n
