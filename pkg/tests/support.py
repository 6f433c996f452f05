"""Shared test helpers: synthetic terrains and independent brute-force oracles.

The oracles here deliberately avoid the package's event machinery: types are
derived directly from (interpolated) elevation values, so they can arbitrate
what the tracker should have produced.
"""

import numpy as np

from tintrack.tin import ClosedMesh, build_closure, delaunay_triangulate

# ------------------------------------------------------------- synthetic data


def jittered_grid(nx, ny, spacing=1.0, jitter=0.3, seed=0):
    """Grid points with deterministic jitter; distinct (x, y) guaranteed."""
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    xy = np.column_stack([gx.ravel(), gy.ravel()]) * spacing
    xy = xy + rng.uniform(-jitter, jitter, xy.shape) * spacing
    return xy


def gaussian_bump(xy, center, amplitude, variance):
    d2 = (xy[:, 0] - center[0]) ** 2 + (xy[:, 1] - center[1]) ** 2
    return amplitude * np.exp(-d2 / (2.0 * variance))


def random_terrain_tin(n_points, extent=100.0, seed=0, n_bumps=6):
    """Delaunay mesh over uniform random points with a smooth random surface."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, extent, (n_points, 2))
    z = np.zeros(n_points)
    for _ in range(n_bumps):
        c = rng.uniform(0.2 * extent, 0.8 * extent, 2)
        amp = rng.uniform(-8.0, 12.0)
        var = rng.uniform(0.02, 0.1) * extent**2
        z += gaussian_bump(xy, c, amp, var)
    return delaunay_triangulate(np.column_stack([xy, z]))


def random_elevations(n, seed):
    return np.random.default_rng(seed).uniform(0.0, 100.0, n)


# --------------------------------------------------------- classification


def brute_code(z, v, ring):
    """Type code of one vertex by direct cyclic run counting (plain Python)."""
    above = [
        bool(z[v] > z[u] or (z[v] == z[u] and v > u)) for u in ring
    ]
    runs_true = runs_false = 0
    m = len(above)
    for k in range(m):
        if above[k] and not above[k - 1]:
            runs_true += 1
        if not above[k] and above[k - 1]:
            runs_false += 1
    if runs_true == 0 and runs_false == 0:
        return 1 if above[0] else 2
    if runs_false == 0:
        return 1
    if runs_true == 0:
        return 2
    return 0 if runs_true == 1 else runs_true + 1


def brute_codes(cm: ClosedMesh, elevations):
    """Codes of every closed-mesh vertex from raw values (slow, independent)."""
    z = list(np.asarray(elevations, dtype=np.float64)) + [-np.inf] * (
        cm.n_vertices - cm.n_real
    )
    return np.array([brute_code(z, v, cm.rings[v]) for v in range(cm.n_vertices)])


class RingTables:
    """Flattened closed-mesh rings for the vectorized timestamp oracle."""

    def __init__(self, cm: ClosedMesh):
        self.cm = cm
        self.center = np.concatenate(
            [np.full(len(r), v, dtype=np.int64) for v, r in enumerate(cm.rings)]
        )
        self.nbr = np.concatenate(cm.rings).astype(np.int64)
        counts = np.array([len(r) for r in cm.rings])
        self.offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        self.seg_len = counts
        prev = np.arange(len(self.nbr)) - 1
        prev[self.offsets[:-1]] = self.offsets[1:] - 1
        self.prev = prev
        self.center_virtual = self.center >= cm.n_real
        self.nbr_virtual = self.nbr >= cm.n_real

    def entry_diffs(self, z):
        """Per ring entry center-minus-neighbor difference for real pairs."""
        d = np.zeros(len(self.center))
        real = ~(self.center_virtual | self.nbr_virtual)
        d[real] = z[self.center[real]] - z[self.nbr[real]]
        return d

    def codes_from_above(self, above):
        """Classify every vertex from per-entry above/below booleans (B, R)."""
        prev = above[:, self.prev]
        starts_true = above & ~prev
        n_above = np.add.reduceat(above, self.offsets[:-1], axis=1)
        k_low = np.add.reduceat(starts_true, self.offsets[:-1], axis=1)
        return np.where(
            n_above == self.seg_len,
            1,
            np.where(n_above == 0, 2, np.where(k_low == 1, 0, k_low + 1)),
        )


def oracle_codes_batch(tables: RingTables, values):
    """Classify all vertices for a batch of elevation vectors.

    ``values`` is (B, n_real); virtual cap vertices read as below everything.
    Returns (B, n_vertices) type codes.
    """
    cm = tables.cm
    vals = np.concatenate(
        [
            np.asarray(values, dtype=np.float64),
            np.full((len(values), cm.n_vertices - cm.n_real), -np.inf),
        ],
        axis=1,
    )
    zc = vals[:, tables.center]
    zn = vals[:, tables.nbr]
    above = (zc > zn) | ((zc == zn) & (tables.center > tables.nbr))
    return tables.codes_from_above(above)


def delta_scan(ss, samples_per_pair=200, tables=None):
    """Dense timestamp scan: sample times and oracle codes at each time.

    Comparisons interpolate the per-edge differences (exact at the layers),
    which is the faithful float evaluation of the piecewise-linear model;
    interpolating absolute elevations first can round one-ulp contrasts away.
    Samples sit at half-steps inside each layer pair so they never coincide
    with constructed event timestamps. Returns (times, codes) with codes of
    shape (num_samples, n_vertices).
    """
    cm = build_closure(ss.tin)
    if tables is None:
        tables = RingTables(cm)
    tie_break = tables.center > tables.nbr
    all_t = []
    all_codes = []
    for layer in range(ss.num_layers):
        deltas = (np.arange(samples_per_pair) + 0.5) / samples_per_pair
        d0 = tables.entry_diffs(ss.layers[layer])
        d1 = tables.entry_diffs(ss.layers[layer + 1])
        all_t.append(layer + deltas)
        chunk = 256
        for lo in range(0, len(deltas), chunk):
            dl = deltas[lo : lo + chunk, None]
            dt = (1.0 - dl) * d0[None, :] + dl * d1[None, :]
            above = (dt > 0) | ((dt == 0) & tie_break)
            above[:, tables.nbr_virtual] = True
            above[:, tables.center_virtual] = False
            all_codes.append(tables.codes_from_above(above))
    return np.concatenate(all_t), np.concatenate(all_codes)


def replay_codes(result, times):
    """Tracked type codes at the given (sorted) times, replayed from the log.

    The log is kept in emission order: records sharing a float timestamp are
    already sequenced the way the tracker processed them.
    """
    codes = result.initial_codes.copy()
    out = np.empty((len(times), len(codes)), dtype=np.int64)
    events = list(result.transitions)
    k = 0
    for i, t in enumerate(times):
        while k < len(events) and events[k].t <= t:
            rec = events[k]
            codes[rec.edge[0]] = rec.after[0]
            codes[rec.edge[1]] = rec.after[1]
            k += 1
        out[i] = codes
    return out


def first_scan_mismatch(ss, result, samples_per_pair=200):
    """Compare tracked types against the dense oracle; None when identical."""
    times, oracle = delta_scan(ss, samples_per_pair)
    tracked = replay_codes(result, times)
    bad = np.nonzero(oracle != tracked)
    if len(bad[0]) == 0:
        return None
    i, v = int(bad[0][0]), int(bad[1][0])
    return {
        "t": float(times[i]),
        "vertex": v,
        "oracle": int(oracle[i, v]),
        "tracked": int(tracked[i, v]),
    }


# ----------------------------------------------------------------- geometry


def brute_fps(xy, count, seed):
    """Greedy farthest-point reference written as the definition reads."""
    chosen = [seed]
    while len(chosen) < count:
        best, best_d = None, -1.0
        for i in range(len(xy)):
            if i in chosen:
                continue
            d = min(
                (xy[i, 0] - xy[j, 0]) ** 2 + (xy[i, 1] - xy[j, 1]) ** 2
                for j in chosen
            )
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def circumcircle(p0, p1, p2):
    """Center and radius of the circle through three points (xy)."""
    ax, ay = p0
    bx, by = p1
    cx, cy = p2
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0:
        return None, np.inf
    ux = (
        (ax * ax + ay * ay) * (by - cy)
        + (bx * bx + by * by) * (cy - ay)
        + (cx * cx + cy * cy) * (ay - by)
    ) / d
    uy = (
        (ax * ax + ay * ay) * (cx - bx)
        + (bx * bx + by * by) * (ax - cx)
        + (cx * cx + cy * cy) * (bx - ax)
    ) / d
    r = np.hypot(ax - ux, ay - uy)
    return (ux, uy), r
