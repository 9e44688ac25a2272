# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay bit-identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def composition_sum(const double[:, ::1] y, Py_ssize_t m):
    """Sequential sum of y[0,i]*y[1,j]*y[2,k]*y[3,l] over i+j+k+l == m."""
    cdef Py_ssize_t i, j, k
    cdef double acc = 0.0
    cdef double pi_, pij
    with nogil:
        for i in range(m + 1):
            pi_ = y[0, i]
            for j in range(m - i + 1):
                pij = pi_ * y[1, j]
                for k in range(m - i - j + 1):
                    acc = acc + pij * y[2, k] * y[3, m - i - j - k]
    return acc


def dead_time_scan(const cnp.uint8_t[:, ::1] clicks, long dead_time, int smart):
    """Apply SPAD hold-off to a train of all-ready click patterns.

    Returns (outcomes, offered) where outcomes[t] is the number of branches
    recorded on the t-th gated pulse and offered is the number of laser
    pulses that went by.
    """
    cdef Py_ssize_t n = clicks.shape[0]
    cdef Py_ssize_t t, b
    cdef long offered = 0
    cdef long dead[4]
    cdef int count
    outcomes_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] outcomes = outcomes_arr
    for b in range(4):
        dead[b] = 0
    with nogil:
        if smart:
            # gating waits until all four branches recover, so each click
            # skips exactly dead_time pulses; the last pulse's hold-off is not counted
            for t in range(n):
                count = 0
                for b in range(4):
                    count += clicks[t, b] != 0
                outcomes[t] = count
                offered += 1
                if count and t + 1 < n:
                    offered += dead_time
        else:
            for t in range(n):
                offered += 1
                count = 0
                for b in range(4):
                    if dead[b] > 0:
                        dead[b] -= 1
                    elif clicks[t, b]:
                        count += 1
                        dead[b] = dead_time
                outcomes[t] = count
    return outcomes_arr, offered
