"""Triangle meshes over terrain points: construction, adjacency, classification.

A ``Tin`` keeps, per vertex, a cyclically ordered neighbor ring (clockwise in
the xy-plane); interior rings are closed cycles and boundary rings are open
chains. All elevation comparisons are made strict by symbolic perturbation:
``z`` values tie-break on vertex index, so flat terrain still has a total
order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DataError
from .kernels import run_counts

# Vertex type codes. A k-fold saddle is encoded as 2 + k, so a simple saddle
# is 3 and codes grow with multiplicity.
REGULAR = 0
MAXIMUM = 1
MINIMUM = 2
SADDLE = 3

_KIND_NAMES = {REGULAR: "regular", MAXIMUM: "maximum", MINIMUM: "minimum"}


def kind_name(code: int) -> str:
    if code in _KIND_NAMES:
        return _KIND_NAMES[code]
    mult = code - 2
    return "saddle" if mult == 1 else f"saddle({mult})"


def saddle_multiplicity(code: int) -> int:
    return code - 2 if code >= SADDLE else 0


def index_contribution(code: int) -> int:
    """Contribution to the alternating count: +1 extrema, -k for k-fold saddles."""
    if code in (MAXIMUM, MINIMUM):
        return 1
    if code >= SADDLE:
        return -(code - 2)
    return 0


@dataclass(frozen=True)
class CriticalType:
    kind: str
    multiplicity: int = 0

    @staticmethod
    def from_code(code: int) -> "CriticalType":
        if code == REGULAR:
            return CriticalType("regular", 0)
        if code == MAXIMUM:
            return CriticalType("maximum", 1)
        if code == MINIMUM:
            return CriticalType("minimum", 1)
        mult = code - 2
        return CriticalType("saddle" if mult == 1 else "kfold_saddle", mult)


@dataclass(frozen=True)
class VertexSignature:
    """Cyclic above/below comparisons around a vertex, in ring order."""

    comparisons: np.ndarray
    k_higher: int
    k_lower: int


@dataclass(frozen=True)
class EulerCount:
    n_max: int
    n_min: int
    n_saddle: int

    @property
    def alternating_sum(self) -> int:
        return self.n_max + self.n_min - self.n_saddle


@dataclass(frozen=True)
class AlphaShapeConfig:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass
class Tin:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) CCW in the xy-plane
    neighbors: list  # per-vertex ring, clockwise; open chain on the boundary
    boundary: np.ndarray  # (V,) bool
    _edges: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        """Canonical (a < b) edge pairs, lexicographically sorted."""
        if self._edges is None:
            t = self.triangles
            pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            pairs = np.sort(pairs, axis=1)
            self._edges = np.unique(pairs, axis=0)
        return self._edges

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def median_edge_length(self) -> float:
        e = self.edges
        d = self.vertices[e[:, 0], :2] - self.vertices[e[:, 1], :2]
        return float(np.median(np.hypot(d[:, 0], d[:, 1])))

    def num_components(self) -> int:
        parent = np.arange(self.num_vertices)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        roots = {find(i) for i in range(self.num_vertices)}
        return len(roots)


# ------------------------------------------------------------ construction


def _orient_ccw(triangles, xy):
    t = np.asarray(triangles, dtype=np.int64).copy()
    p0, p1, p2 = xy[t[:, 0]], xy[t[:, 1]], xy[t[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (
        p2[:, 0] - p0[:, 0]
    )
    if np.any(cross == 0.0):
        raise DataError("degenerate (zero-area) triangle in triangulation")
    flip = cross < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def _incircle(xy, a, b, c, d):
    """Positive if d lies inside the circumcircle of CCW triangle (a, b, c)."""
    ax, ay = xy[a] - xy[d]
    bx, by = xy[b] - xy[d]
    cx, cy = xy[c] - xy[d]
    return (
        (ax * ax + ay * ay) * (bx * cy - by * cx)
        - (bx * bx + by * by) * (ax * cy - ay * cx)
        + (cx * cx + cy * cy) * (ax * by - ay * bx)
    )


def _edge_triangle_map(triangles):
    emap = {}
    for ti, (u, v, w) in enumerate(triangles):
        for a, b in ((u, v), (v, w), (w, u)):
            key = (a, b) if a < b else (b, a)
            emap.setdefault(key, []).append(ti)
    return emap


def _canonicalize_cocircular(triangles, xy, max_rounds=8):
    """Deterministic diagonals for cocircular quads.

    Qhull picks an arbitrary diagonal when four sites are cocircular (grids,
    symmetric layouts). Flip such diagonals to the one with the
    lexicographically smaller (min, max) index pair so the mesh is identical
    across runs and platforms.
    """
    tris = triangles.copy()
    extent = float(np.max(np.ptp(xy, axis=0))) if len(xy) else 1.0
    tol = 1e-9 * max(extent, 1.0) ** 4
    for _ in range(max_rounds):
        emap = _edge_triangle_map(tris)
        touched = set()
        changed = False
        for (a, b), owners in emap.items():
            if len(owners) != 2:
                continue
            t1, t2 = owners
            if t1 in touched or t2 in touched:
                continue
            c = [v for v in tris[t1] if v != a and v != b][0]
            d = [v for v in tris[t2] if v != a and v != b][0]
            lo, hi = (c, d) if c < d else (d, c)
            if (lo, hi) >= (a, b):
                continue
            if abs(_incircle(xy, a, b, c, d)) > tol:
                continue
            # The flipped diagonal must split a strictly convex quad.
            s1 = _orient2d(xy, c, d, a)
            s2 = _orient2d(xy, c, d, b)
            if s1 == 0 or s2 == 0 or (s1 > 0) == (s2 > 0):
                continue
            tris[t1] = _ccw_one((c, d, a), xy)
            tris[t2] = _ccw_one((c, d, b), xy)
            touched.update((t1, t2))
            changed = True
        if not changed:
            break
    return tris


def _orient2d(xy, a, b, c):
    return (xy[b, 0] - xy[a, 0]) * (xy[c, 1] - xy[a, 1]) - (xy[b, 1] - xy[a, 1]) * (
        xy[c, 0] - xy[a, 0]
    )


def _ccw_one(tri, xy):
    a, b, c = tri
    if _orient2d(xy, a, b, c) < 0:
        return (a, c, b)
    return (a, b, c)


class _NonManifold(Exception):
    def __init__(self, vertex):
        self.vertex = vertex


def _ccw_chains(succ_v):
    """Split a vertex's CCW successor map into maximal chains or one cycle.

    Returns (chains, is_cycle): each chain is a CCW-ordered neighbor list.
    """
    if not succ_v:
        return [], False
    preds = set(succ_v.values())
    starts = sorted(u for u in succ_v if u not in preds)
    if not starts:
        # One or more closed cycles; a single full cycle means interior.
        remaining = dict(succ_v)
        cycles = []
        while remaining:
            start = min(remaining)
            chain = [start]
            cur = start
            while True:
                nxt = remaining.pop(cur)
                if nxt == start:
                    break
                chain.append(nxt)
                cur = nxt
            cycles.append(chain)
        return cycles, True
    chains = []
    consumed = set()
    for start in starts:
        chain = [start]
        cur = start
        while cur in succ_v:
            cur = succ_v[cur]
            chain.append(cur)
        consumed.update(chain)
        chains.append(chain)
    if len(consumed) != len(set(succ_v) | preds):
        # Leftover cycle coexisting with open chains: badly pinched.
        raise _NonManifold(None)
    return chains, False


def build_rings(n_vertices, triangles):
    """Clockwise neighbor rings and boundary flags from CCW triangles.

    Raises ``_NonManifold`` when a vertex's incident triangles form more than
    one fan (pinched vertex).
    """
    succ = [dict() for _ in range(n_vertices)]
    for u, v, w in triangles:
        for a, b, c in ((u, v, w), (v, w, u), (w, u, v)):
            if b in succ[a]:
                raise DataError("non-manifold edge (repeated directed edge)")
            succ[a][b] = c
    neighbors = []
    boundary = np.zeros(n_vertices, dtype=bool)
    for v in range(n_vertices):
        try:
            chains, is_cycle = _ccw_chains(succ[v])
        except _NonManifold:
            raise _NonManifold(v) from None
        if not chains:
            neighbors.append(np.empty(0, dtype=np.int64))
            boundary[v] = True
            continue
        if len(chains) > 1:
            raise _NonManifold(v)
        ring = chains[0]
        boundary[v] = not is_cycle
        # CCW chain reversed gives the clockwise ring.
        neighbors.append(np.asarray(ring[::-1], dtype=np.int64))
    return neighbors, boundary


def _split_pinched(vertices, triangles):
    """Duplicate pinched vertices so every vertex has a single triangle fan.

    Alpha filtering can leave bowtie configurations; each extra fan gets its
    own vertex copy (same coordinates) appended at the end.
    """
    tris = [list(t) for t in triangles]
    verts = [list(p) for p in vertices]
    while True:
        try:
            build_rings(len(verts), tris)
            break
        except _NonManifold as nm:
            v = nm.vertex
            succ = {}
            for u, vv, w in tris:
                for a, b, c in ((u, vv, w), (vv, w, u), (w, u, vv)):
                    if a == v:
                        succ[b] = c
            chains, is_cycle = _ccw_chains(succ)
            # Keep the first fan on v; rehome the rest onto fresh copies.
            for chain in chains[1:]:
                new_id = len(verts)
                verts.append(list(verts[v]))
                members = set(zip(chain, chain[1:]))
                if is_cycle:
                    members.add((chain[-1], chain[0]))
                for t in tris:
                    if v in t:
                        others = [x for x in t if x != v]
                        if (others[0], others[1]) in members or (
                            others[1],
                            others[0],
                        ) in members:
                            t[t.index(v)] = new_id
    return np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64)


def delaunay_triangulate(points) -> Tin:
    """Delaunay triangulation of the xy projection, z carried through.

    Duplicate sites and fully collinear input are rejected.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be an (N, 3) array")
    if len(pts) < 3:
        raise DataError("triangulation needs at least 3 points")
    xy = pts[:, :2]
    uniq = np.unique(xy, axis=0)
    if len(uniq) != len(xy):
        raise DataError("duplicate (x, y) sites; deduplicate the cloud first")
    try:
        dt = Delaunay(xy)
    except QhullError as exc:
        raise DataError(f"triangulation failed: {exc}") from None
    if dt.simplices.size == 0:
        raise DataError("all points are collinear")
    tris = _orient_ccw(dt.simplices, xy)
    tris = _canonicalize_cocircular(tris, xy)
    neighbors, boundary = build_rings(len(pts), tris)
    return Tin(pts.copy(), tris, neighbors, boundary)


def circumradii(vertices, triangles):
    """Circumradius per triangle (xy-plane); degenerate triangles get inf."""
    xy = np.asarray(vertices, dtype=np.float64)[:, :2]
    t = np.asarray(triangles, dtype=np.int64)
    p0, p1, p2 = xy[t[:, 0]], xy[t[:, 1]], xy[t[:, 2]]
    a = np.linalg.norm(p1 - p0, axis=1)
    b = np.linalg.norm(p2 - p1, axis=1)
    c = np.linalg.norm(p0 - p2, axis=1)
    area2 = np.abs(
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    )
    with np.errstate(divide="ignore"):
        return np.where(area2 > 0, a * b * c / (2.0 * area2), np.inf)


def alpha_shape_filter(tin: Tin, cfg: AlphaShapeConfig) -> Tin:
    """Drop triangles whose circumradius exceeds alpha; compact the mesh.

    Isolated vertices are removed and pinched vertices split, so the result is
    again a manifold mesh (possibly with several components).
    """
    radii = circumradii(tin.vertices, tin.triangles)
    keep = radii <= cfg.alpha
    if not keep.any():
        raise DataError("alpha-shape filtering removed every triangle")
    tris = tin.triangles[keep]
    used = np.unique(tris)
    remap = np.full(tin.num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = tin.vertices[used]
    tris = remap[tris]
    verts, tris = _split_pinched(verts, tris)
    neighbors, boundary = build_rings(len(verts), tris)
    return Tin(verts, tris, neighbors, boundary)


# ------------------------------------------------------------ tin file io


def save_tin(tin: Tin, path):
    """ASCII mesh file: first line "V T", V coordinate lines, T index lines."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(f"{tin.num_vertices} {len(tin.triangles)}\n")
        for x, y, z in tin.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for i, j, k in tin.triangles:
            fh.write(f"{int(i)} {int(j)} {int(k)}\n")
    os.replace(tmp, path)


def load_tin(path) -> Tin:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: bad header")
        nv, nt = (int(h) for h in header)
        verts = np.empty((nv, 3), dtype=np.float64)
        for i in range(nv):
            fields = fh.readline().split()
            if len(fields) != 3:
                raise DataError(f"{path}:{i + 2}: bad vertex line")
            verts[i] = [float(f) for f in fields]
        tris = np.empty((nt, 3), dtype=np.int64)
        for i in range(nt):
            fields = fh.readline().split()
            if len(fields) != 3:
                raise DataError(f"{path}:{nv + i + 2}: bad triangle line")
            tris[i] = [int(f) for f in fields]
    if nt and (tris.min() < 0 or tris.max() >= nv):
        raise DataError(f"{path}: triangle index out of range")
    neighbors, boundary = build_rings(nv, tris)
    return Tin(verts, tris, neighbors, boundary)


# ------------------------------------------------- signatures and closure


def perturbed_greater(z, i, j):
    """Strict comparison of (z, index) pairs; never ties for i != j."""
    zi, zj = z[i], z[j]
    return bool(zi > zj or (zi == zj and i > j))


def vertex_signature(tin: Tin, elevations, v) -> VertexSignature:
    """Ring comparison sequence for one vertex.

    Boundary rings are closed with a below-everything sentinel entry so run
    counting is cyclic for every vertex.
    """
    z = np.asarray(elevations, dtype=np.float64)
    ring = tin.neighbors[v]
    zc = z[v]
    zn = z[ring]
    bools = (zc > zn) | ((zc == zn) & (v > ring))
    if tin.boundary[v]:
        bools = np.append(bools, True)
    lower_runs, higher_runs = run_counts(bools.astype(np.uint8))
    return VertexSignature(bools, k_higher=higher_runs, k_lower=lower_runs)


def classify_vertex(sig: VertexSignature) -> CriticalType:
    """Map run counts to a critical type."""
    if sig.k_higher == 0:
        return CriticalType.from_code(MAXIMUM)
    if sig.k_lower == 0:
        return CriticalType.from_code(MINIMUM)
    if sig.k_higher != sig.k_lower:
        raise AssertionError("cyclic signature with unbalanced run counts")
    if sig.k_higher == 1:
        return CriticalType.from_code(REGULAR)
    return CriticalType.from_code(1 + sig.k_lower)


@dataclass
class ClosedMesh:
    """A Tin with every boundary cycle capped by a virtual below-all vertex.

    Virtual vertices make the mesh topologically closed: classification and
    the alternating-count invariant hold exactly. Real vertices keep their
    indices; virtual ones follow. The first ``n_real_edges`` entries of
    ``edges`` are the mesh edges, canonical (a < b) and lexicographically
    sorted; edges to virtual vertices come after and never flip.
    """

    tin: Tin
    n_real: int
    n_vertices: int
    rings: list
    ring_eids: list
    edges: np.ndarray
    n_real_edges: int
    n_components: int
    boundary_cycles: list


def _boundary_cycles(tin: Tin):
    """Boundary cycles traced along directed boundary edges of CCW triangles."""
    count = {}
    for u, v, w in tin.triangles:
        for a, b in ((u, v), (v, w), (w, u)):
            key = (a, b) if a < b else (b, a)
            count[key] = count.get(key, 0) + 1
    nxt = {}
    for u, v, w in tin.triangles:
        for a, b in ((u, v), (v, w), (w, u)):
            key = (a, b) if a < b else (b, a)
            if count[key] == 1:
                nxt[a] = b
    cycles = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        cycle = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            cycle.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        cycles.append(np.asarray(cycle, dtype=np.int64))
    return cycles


def build_closure(tin: Tin) -> ClosedMesh:
    cycles = _boundary_cycles(tin)
    n_real = tin.num_vertices
    cycle_of = {}
    for ci, cyc in enumerate(cycles):
        for v in cyc:
            if int(v) in cycle_of:
                raise DataError("vertex on two boundary cycles (pinched mesh)")
            cycle_of[int(v)] = ci

    rings = []
    for v in range(n_real):
        ring = tin.neighbors[v]
        if tin.boundary[v]:
            ring = np.append(ring, n_real + cycle_of[v])
        rings.append(np.asarray(ring, dtype=np.int64))
    for cyc in cycles:
        rings.append(cyc.copy())

    real_edges = tin.edges
    virt_edges = []
    for ci, cyc in enumerate(cycles):
        virt = n_real + ci
        for v in sorted(cyc):
            virt_edges.append((int(v), virt))
    if virt_edges:
        edges = np.concatenate([real_edges, np.asarray(virt_edges, dtype=np.int64)])
    else:
        edges = real_edges.copy()

    eid = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    ring_eids = []
    for v, ring in enumerate(rings):
        ids = [eid[(v, int(u)) if v < u else (int(u), v)] for u in ring]
        ring_eids.append(np.asarray(ids, dtype=np.int32))

    return ClosedMesh(
        tin=tin,
        n_real=n_real,
        n_vertices=n_real + len(cycles),
        rings=rings,
        ring_eids=ring_eids,
        edges=edges,
        n_real_edges=len(real_edges),
        n_components=tin.num_components(),
        boundary_cycles=cycles,
    )


def closed_values(cm: ClosedMesh, elevations):
    """Extend an elevation vector with -inf entries for the virtual vertices."""
    z = np.asarray(elevations, dtype=np.float64)
    if len(z) != cm.n_real:
        raise ValueError("elevation vector length mismatch")
    return np.concatenate([z, np.full(cm.n_vertices - cm.n_real, -np.inf)])


def classify_closed(cm: ClosedMesh, elevations) -> np.ndarray:
    """Type codes for every vertex of the virtually closed mesh."""
    z = closed_values(cm, elevations)
    codes = np.empty(cm.n_vertices, dtype=np.int64)
    for v in range(cm.n_vertices):
        ring = cm.rings[v]
        zc = z[v]
        zn = z[ring]
        bools = (zc > zn) | ((zc == zn) & (v > ring))
        lower_runs, higher_runs = run_counts(bools.astype(np.uint8))
        if higher_runs == 0:
            codes[v] = MAXIMUM
        elif lower_runs == 0:
            codes[v] = MINIMUM
        elif lower_runs == 1:
            codes[v] = REGULAR
        else:
            codes[v] = 1 + lower_runs
    return codes


def classify_vertices(tin: Tin, elevations):
    """Critical types of the real vertices on the virtually closed mesh."""
    cm = build_closure(tin)
    codes = classify_closed(cm, elevations)
    return [CriticalType.from_code(int(c)) for c in codes[: cm.n_real]]


def euler_count(tin: Tin, elevations) -> EulerCount:
    """Counts of maxima, minima, and multiplicity-weighted saddles.

    Computed on the virtually closed mesh, so virtual cap vertices show up as
    synthetic minima and the alternating sum equals 2 per connected component.
    """
    cm = build_closure(tin)
    codes = classify_closed(cm, elevations)
    n_max = int(np.count_nonzero(codes == MAXIMUM))
    n_min = int(np.count_nonzero(codes == MINIMUM))
    n_sad = int(sum(saddle_multiplicity(int(c)) for c in codes if c >= SADDLE))
    return EulerCount(n_max=n_max, n_min=n_min, n_saddle=n_sad)
