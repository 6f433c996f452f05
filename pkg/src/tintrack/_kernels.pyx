# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: farthest-point selection and ring classification.

Must stay behaviourally identical to ``_kernels_py``; the test suite checks
both backends against each other.
"""

import numpy as np


def fps_select(const double[:, ::1] xy, Py_ssize_t count, Py_ssize_t seed):
    """Greedy farthest-point pick on the xy-plane; ties go to the lowest index."""
    cdef Py_ssize_t n = xy.shape[0]
    out = np.empty(count, dtype=np.int64)
    cdef long long[::1] sel = out
    dist = np.empty(n, dtype=np.float64)
    cdef double[::1] d2 = dist
    cdef Py_ssize_t i, k, best
    cdef double dx, dy, dd, bestval, px, py

    px = xy[seed, 0]
    py = xy[seed, 1]
    for i in range(n):
        dx = xy[i, 0] - px
        dy = xy[i, 1] - py
        d2[i] = dx * dx + dy * dy
    sel[0] = seed
    for k in range(1, count):
        best = 0
        bestval = -1.0
        for i in range(n):
            if d2[i] > bestval:
                bestval = d2[i]
                best = i
        sel[k] = best
        px = xy[best, 0]
        py = xy[best, 1]
        for i in range(n):
            dx = xy[i, 0] - px
            dy = xy[i, 1] - py
            dd = dx * dx + dy * dy
            if dd < d2[i]:
                d2[i] = dd
    return out


def run_counts(const unsigned char[::1] bools):
    """Counts of maximal True and False runs in a cyclic boolean sequence."""
    cdef Py_ssize_t n = bools.shape[0]
    if n == 0:
        return 0, 0
    cdef Py_ssize_t true_runs = 0, false_runs = 0, k
    cdef unsigned char prev = bools[n - 1], cur
    for k in range(n):
        cur = bools[k]
        if cur and not prev:
            true_runs += 1
        elif prev and not cur:
            false_runs += 1
        prev = cur
    if true_runs == 0 and false_runs == 0:
        if bools[0]:
            return 1, 0
        return 0, 1
    return true_runs, false_runs


def vertex_type_code(
    const int[::1] eids,
    const unsigned char[::1] side,
    Py_ssize_t lo,
    Py_ssize_t hi,
    const unsigned char[::1] state,
):
    """Type code of one vertex from per-edge orientation state.

    0 regular, 1 maximum, 2 minimum, 2+k for a k-fold saddle.
    """
    cdef Py_ssize_t k
    cdef Py_ssize_t lower_runs = 0, higher_runs = 0
    cdef unsigned char prev, cur
    if hi <= lo:
        return 0
    prev = state[eids[hi - 1]] == side[hi - 1]
    for k in range(lo, hi):
        cur = state[eids[k]] == side[k]
        if cur and not prev:
            lower_runs += 1
        elif prev and not cur:
            higher_runs += 1
        prev = cur
    if lower_runs == 0 and higher_runs == 0:
        if state[eids[lo]] == side[lo]:
            return 1
        return 2
    if higher_runs == 0:
        return 1
    if lower_runs == 0:
        return 2
    if lower_runs == 1:
        return 0
    return 1 + lower_runs
