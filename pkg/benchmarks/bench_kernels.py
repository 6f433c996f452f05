"""Benchmark the compiled kernels against the pure-Python fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Covers the two hot kernels (farthest-point selection, per-vertex ring
classification) and an end-to-end tracking run with each backend wired in.
"""

import sys
import time

import numpy as np

from tintrack import _kernels_py

try:
    from tintrack import _kernels
except ImportError:
    _kernels = None

import tintrack.tracking as tracking
from tintrack.smoothing import SmoothingConfig, build_scale_space
from tintrack.tin import delaunay_triangulate


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_fps(impl, xy, count):
    return timeit(lambda: impl.fps_select(xy, count, 0))


def bench_type_codes(impl, eids, side, offsets, state):
    def run():
        for v in range(len(offsets) - 1):
            impl.vertex_type_code(eids, side, offsets[v], offsets[v + 1], state)

    return timeit(run)


def random_mesh(n, seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 200.0, (n, 2))
    z = rng.uniform(0, 30.0, n)
    return delaunay_triangulate(np.column_stack([xy, z])), z


def bench_tracking(impl_code, tin, z):
    ss = build_scale_space(tin, z, SmoothingConfig(num_layers=2))
    saved = tracking.vertex_type_code
    tracking.vertex_type_code = impl_code
    try:
        return timeit(lambda: tracking.track_scale_space(ss), repeats=2)
    finally:
        tracking.vertex_type_code = saved


def main():
    if _kernels is None:
        print("compiled kernels not built; run pip install -e . first")
        return 1

    rng = np.random.default_rng(0)
    rows = []

    xy = np.ascontiguousarray(rng.uniform(0, 1000.0, (20_000, 2)))
    t_py = bench_fps(_kernels_py, xy, 4000)
    t_cy = bench_fps(_kernels, xy, 4000)
    rows.append(("fps_select 4k of 20k points", t_py, t_cy))

    tin, z = random_mesh(20_000, 1)
    cm = tracking.build_closure(tin)
    flat = tracking._FlatRings(cm)
    state = tracking._initial_state(cm, z)
    t_py = bench_type_codes(_kernels_py, flat.eids, flat.side, flat.offsets, state)
    t_cy = bench_type_codes(_kernels, flat.eids, flat.side, flat.offsets, state)
    rows.append(("vertex_type_code full sweep (20k vertices)", t_py, t_cy))

    tin_small, z_small = random_mesh(6_000, 2)
    t_py = bench_tracking(_kernels_py.vertex_type_code, tin_small, z_small)
    t_cy = bench_tracking(_kernels.vertex_type_code, tin_small, z_small)
    rows.append(("track_scale_space (6k vertices, L=2)", t_py, t_cy))

    width = max(len(r[0]) for r in rows)
    print(f"{'benchmark':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, t_py, t_cy in rows:
        print(f"{name:<{width}}  {t_py * 1e3:>8.1f}ms  {t_cy * 1e3:>8.1f}ms  {t_py / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
