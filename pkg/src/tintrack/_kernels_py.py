"""Pure NumPy fallbacks for the compiled kernels in ``_kernels.pyx``.

Both implementations must stay behaviourally identical; ``tests/test_kernels.py``
checks them against each other on random inputs.
"""

import numpy as np


def fps_select(xy, count, seed):
    """Greedy farthest-point selection on the xy-plane.

    Picks ``seed`` first, then repeatedly the point maximizing the minimum
    squared distance to the chosen set. Distance ties resolve to the lowest
    index (``argmax`` returns the first maximum).
    """
    xy = np.asarray(xy, dtype=np.float64)
    sel = np.empty(count, dtype=np.int64)
    sel[0] = seed
    if count == 1:
        return sel
    d2 = ((xy - xy[seed]) ** 2).sum(axis=1)
    for k in range(1, count):
        i = int(np.argmax(d2))
        sel[k] = i
        cand = ((xy - xy[i]) ** 2).sum(axis=1)
        np.minimum(d2, cand, out=d2)
    return sel


def run_counts(bools):
    """Count maximal runs of True and of False in a cyclic boolean sequence."""
    b = np.asarray(bools, dtype=bool)
    if b.size == 0:
        return 0, 0
    if b.all():
        return 1, 0
    if not b.any():
        return 0, 1
    prev = np.roll(b, 1)
    true_runs = int(np.count_nonzero(b & ~prev))
    false_runs = int(np.count_nonzero(~b & prev))
    return true_runs, false_runs


def vertex_type_code(eids, side, lo, hi, state):
    """Classify one vertex from per-edge orientation state.

    ``eids[lo:hi]`` are edge ids around the vertex in ring order, ``side`` is 1
    where the vertex is the canonical (lower-index) endpoint of that edge, and
    ``state[e]`` is 1 while the canonical endpoint is the higher one. Returns
    the type code: 0 regular, 1 maximum, 2 minimum, 2+k for a k-fold saddle.
    """
    if hi <= lo:
        return 0
    above = state[eids[lo:hi]] == side[lo:hi]
    lower_runs, higher_runs = run_counts(above)
    if higher_runs == 0:
        return 1
    if lower_runs == 0:
        return 2
    if lower_runs == 1:
        return 0
    return 1 + lower_runs
