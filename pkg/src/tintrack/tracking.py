"""Critical point tracking through the scale space by edge-flip events.

Between two consecutive layers every vertex elevation is linear in time, so
the relative order of an edge's endpoints changes at most once per layer
pair. Vertex types depend only on those pairwise orders, which means the
whole evolution is a chronological sequence of edge flips, each re-classifying
just the two endpoint vertices.

A single flip changes one entry of each endpoint's cyclic signature, so each
endpoint's run counts move by at most one. Together with the alternating-count
balance this leaves exactly one primitive effect per event:

* displacement: one critical point crosses the edge,
* appearance: a (extremum, saddle) pair is created on the two endpoints,
* collapse: an (extremum, saddle) pair on the two endpoints dies.

k-fold saddles are maintained as k co-located simple-saddle traces; when a
primitive touches a multi-saddle vertex the participating trace is chosen by
the velocity rule (prefer the trace whose last step used the flipping edge,
then the most recently active, then the lowest id) and the event is reported
as a compound transition.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .kernels import vertex_type_code
from .smoothing import ScaleSpace
from .tin import (
    MAXIMUM,
    MINIMUM,
    REGULAR,
    SADDLE,
    ClosedMesh,
    CriticalType,
    build_closure,
    index_contribution,
    kind_name,
    saddle_multiplicity,
)

_EXTREMA = (MAXIMUM, MINIMUM)
_T_EPS = 1e-12


@dataclass(frozen=True)
class EdgeFlipEvent:
    edge: tuple  # canonical (a, b), a < b
    t: float
    layer: int


@dataclass
class Trace:
    id: int
    kind: str  # "maximum" | "minimum" | "saddle"
    origin: str  # "initial" | "newborn"
    birth_t: float
    birth_vertex: int
    current_vertex: int
    death_t: float | None = None
    birth_mate: int | None = None
    death_mate: int | None = None
    last_edge: tuple | None = None
    last_event_t: float = 0.0
    path: list = field(default_factory=list)
    synthetic: bool = False


@dataclass(frozen=True)
class TransitionRecord:
    t: float
    layer: int
    edge: tuple
    kind: str  # displacement | appearance | collapse | compound
    primitive: str
    before: tuple  # endpoint type codes at (a, b)
    after: tuple
    trace_ids: tuple


@dataclass
class TrackResult:
    traces: list
    transitions: list
    initial_codes: np.ndarray
    closure: ClosedMesh
    num_layers: int
    events_per_layer: list
    invariant_trace: list | None = None

    def trace(self, trace_id: int) -> Trace:
        return self.traces[trace_id]


@dataclass(frozen=True)
class LifeSpanRecord:
    trace_id: int
    life_span: float
    terminal: str  # "survived" | "collapsed_with_initial"


@dataclass
class LifeSpanTable:
    records: list

    def get(self, trace_id: int) -> LifeSpanRecord:
        return self._index()[trace_id]

    def _index(self):
        if not hasattr(self, "_by_id"):
            self._by_id = {r.trace_id: r for r in self.records}
        return self._by_id


# ----------------------------------------------------------------- events


def _flip_arrays(z0, z1, ea, eb, layer):
    """Vectorized flip detection for one layer pair; returns (t, a, b) sorted.

    Simultaneous crossings are ordered by the limit of the explicit symbolic
    perturbation z + index * eta: edge (a, b) flips where the raw difference
    crosses the infinitesimal level (b - a) * eta, which happens at
    delta0 + eta * (b - a) / slope. Sorting by (delta0, (b - a) / slope)
    therefore reproduces a realizable processing order even when raw
    timestamps tie (plateaus, symmetric fields); the edge pair is a final
    determinism tiebreak.
    """
    za0, zb0 = z0[ea], z0[eb]
    za1, zb1 = z1[ea], z1[eb]
    above0 = za0 > zb0  # ties resolve to the higher index, i.e. "not above"
    above1 = za1 > zb1
    flips = above0 != above1
    if not flips.any():
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64))
    fa, fb = ea[flips], eb[flips]
    num = za0[flips] - zb0[flips]
    den = num + (zb1[flips] - za1[flips])  # = d0 - d1, never 0 for a flip
    delta0 = num / den
    eta_rank = (fa - fb) / den  # (b - a) / slope
    order = np.lexsort((fb, fa, eta_rank, delta0))
    t = layer + np.clip(delta0, _T_EPS, 1.0 - _T_EPS)
    return t[order], fa[order], fb[order]


def edge_flip_time(z_i, z_ip1, edge, layer) -> EdgeFlipEvent | None:
    """Flip event of one edge between two layers, or None if the order holds.

    The timestamp is where the two linearly interpolated elevations cross,
    clamped strictly inside the layer interval when one layer ties.
    """
    a, b = (edge[0], edge[1]) if edge[0] < edge[1] else (edge[1], edge[0])
    z0 = np.asarray(z_i, dtype=np.float64)
    z1 = np.asarray(z_ip1, dtype=np.float64)
    t, fa, _ = _flip_arrays(z0, z1, np.array([a]), np.array([b]), layer)
    if len(t) == 0:
        return None
    return EdgeFlipEvent(edge=(int(a), int(b)), t=float(t[0]), layer=layer)


def detect_events(ss: ScaleSpace, layer: int):
    """All edge flips between layers ``layer`` and ``layer + 1``.

    Sorted chronologically, with the canonical edge pair as tiebreak.
    """
    if not 0 <= layer < ss.num_layers:
        raise ValueError(f"layer {layer} outside [0, {ss.num_layers})")
    edges = ss.tin.edges
    t, fa, fb = _flip_arrays(
        ss.layers[layer], ss.layers[layer + 1], edges[:, 0], edges[:, 1], layer
    )
    return [
        EdgeFlipEvent(edge=(int(a), int(b)), t=float(tt), layer=layer)
        for tt, a, b in zip(t, fa, fb)
    ]


# ------------------------------------------------------- transition logic


def _event_effect(ba, bb, aa, ab):
    """Primitive effect of one flip from the endpoint codes before/after.

    Returns None for a regular flip, else ``(primitive, detail)`` where detail
    pins the participating sides. Raises if the codes violate the balance that
    a single signature-entry flip allows.
    """
    if index_contribution(ba) + index_contribution(bb) != index_contribution(
        aa
    ) + index_contribution(ab):
        raise AssertionError("edge flip changed the alternating count")
    if (ba, bb) == (aa, ab):
        return None
    dsa = saddle_multiplicity(aa) - saddle_multiplicity(ba)
    dsb = saddle_multiplicity(ab) - saddle_multiplicity(bb)
    lost_a = ba in _EXTREMA and aa not in _EXTREMA
    lost_b = bb in _EXTREMA and ab not in _EXTREMA
    gain_a = aa in _EXTREMA and ba not in _EXTREMA
    gain_b = ab in _EXTREMA and bb not in _EXTREMA

    if lost_a and gain_b and ba == ab and dsa == dsb == 0:
        return "displacement", ("extremum", 0, 1)
    if lost_b and gain_a and bb == aa and dsa == dsb == 0:
        return "displacement", ("extremum", 1, 0)
    if dsa == -1 and dsb == 1 and not (lost_a or lost_b or gain_a or gain_b):
        return "displacement", ("saddle", 0, 1)
    if dsa == 1 and dsb == -1 and not (lost_a or lost_b or gain_a or gain_b):
        return "displacement", ("saddle", 1, 0)
    if lost_a and dsb == -1 and not (gain_a or gain_b):
        return "collapse", (0, 1)  # extremum side, saddle side
    if lost_b and dsa == -1 and not (gain_a or gain_b):
        return "collapse", (1, 0)
    if gain_a and dsb == 1 and ba == REGULAR and not (lost_a or lost_b):
        return "appearance", (0, 1)
    if gain_b and dsa == 1 and bb == REGULAR and not (lost_a or lost_b):
        return "appearance", (1, 0)
    raise AssertionError(
        f"impossible endpoint transition {kind_name(ba)},{kind_name(bb)} -> "
        f"{kind_name(aa)},{kind_name(ab)}"
    )


def classify_transition(before, after):
    """Transition kind for endpoint critical types before/after one flip.

    Accepts (CriticalType, CriticalType) pairs or raw codes; returns one of
    "displacement", "appearance", "collapse", "compound", or None when the
    flip leaves both types unchanged. Multiplicity above one on any involved
    endpoint makes the record compound.
    """

    def _code(x):
        if isinstance(x, CriticalType):
            if x.kind == "regular":
                return REGULAR
            if x.kind == "maximum":
                return MAXIMUM
            if x.kind == "minimum":
                return MINIMUM
            return 2 + x.multiplicity
        return int(x)

    codes = tuple(_code(x) for x in (*before, *after))
    effect = _event_effect(*codes)
    if effect is None:
        return None
    if any(saddle_multiplicity(c) >= 2 for c in codes):
        return "compound"
    return effect[0]


def match_velocity(candidates, edge):
    """Pick the co-located trace most likely to move through ``edge``.

    Priority: a trace whose previous step used this edge, then the most
    recently active trace, then the lowest id.
    """
    if not candidates:
        raise ValueError("no candidate traces")
    return max(
        candidates,
        key=lambda tr: (tr.last_edge == edge, tr.last_event_t, -tr.id),
    )


# ------------------------------------------------------------- the tracker


class _FlatRings:
    """Ring tables of a closed mesh flattened for the classification kernel."""

    def __init__(self, cm: ClosedMesh):
        counts = [len(r) for r in cm.rings]
        self.offsets = np.zeros(cm.n_vertices + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        self.eids = np.concatenate(cm.ring_eids).astype(np.int32)
        side = [
            (v < np.asarray(ring)).astype(np.uint8)
            for v, ring in enumerate(cm.rings)
        ]
        self.side = np.concatenate(side)

    def code(self, v, state):
        lo, hi = self.offsets[v], self.offsets[v + 1]
        return vertex_type_code(self.eids, self.side, lo, hi, state)


def _initial_state(cm: ClosedMesh, z):
    state = np.ones(len(cm.edges), dtype=np.uint8)
    re = cm.edges[: cm.n_real_edges]
    state[: cm.n_real_edges] = z[re[:, 0]] > z[re[:, 1]]
    return state


class _Tracker:
    def __init__(self, cm: ClosedMesh, record_invariant_trace=False):
        self.cm = cm
        self.flat = _FlatRings(cm)
        self.traces = []
        self.saddles_at = {}
        self.extremum_at = {}
        self.transitions = []
        self.invariant_trace = [] if record_invariant_trace else None
        self.total_index = 0

    def _new_trace(self, kind, origin, t, vertex, synthetic=False):
        tr = Trace(
            id=len(self.traces),
            kind=kind,
            origin=origin,
            birth_t=t,
            birth_vertex=vertex,
            current_vertex=vertex,
            last_event_t=t,
            synthetic=synthetic,
        )
        self.traces.append(tr)
        return tr

    def seed(self, codes):
        for v in range(self.cm.n_vertices):
            code = int(codes[v])
            synthetic = v >= self.cm.n_real
            if code == MAXIMUM:
                self.extremum_at[v] = self._new_trace("maximum", "initial", 0.0, v, synthetic)
            elif code == MINIMUM:
                self.extremum_at[v] = self._new_trace("minimum", "initial", 0.0, v, synthetic)
            elif code >= SADDLE:
                self.saddles_at[v] = [
                    self._new_trace("saddle", "initial", 0.0, v, synthetic)
                    for _ in range(saddle_multiplicity(code))
                ]
            self.total_index += index_contribution(code)
        if self.total_index != 2 * self.cm.n_components:
            raise AssertionError(
                f"initial alternating count {self.total_index} != "
                f"{2 * self.cm.n_components}"
            )

    # --- primitive applications ---------------------------------------

    def _move_saddle(self, x, y, t, edge):
        tr = match_velocity(self.saddles_at[x], edge)
        self.saddles_at[x].remove(tr)
        if not self.saddles_at[x]:
            del self.saddles_at[x]
        self.saddles_at.setdefault(y, []).append(tr)
        self._moved(tr, y, t, edge)
        return (tr.id,)

    def _move_extremum(self, x, y, t, edge):
        tr = self.extremum_at.pop(x)
        self.extremum_at[y] = tr
        self._moved(tr, y, t, edge)
        return (tr.id,)

    @staticmethod
    def _moved(tr, vertex, t, edge):
        tr.current_vertex = vertex
        tr.last_edge = edge
        tr.last_event_t = t
        tr.path.append((t, edge))

    def _collapse(self, ext_vertex, sad_vertex, t, edge):
        ext = self.extremum_at.pop(ext_vertex)
        sad = match_velocity(self.saddles_at[sad_vertex], edge)
        self.saddles_at[sad_vertex].remove(sad)
        if not self.saddles_at[sad_vertex]:
            del self.saddles_at[sad_vertex]
        for tr, mate in ((ext, sad), (sad, ext)):
            tr.death_t = t
            tr.death_mate = mate.id
            tr.last_event_t = t
        return (ext.id, sad.id)

    def _appear(self, ext_vertex, sad_vertex, ext_code, t, edge):
        kind = "maximum" if ext_code == MAXIMUM else "minimum"
        ext = self._new_trace(kind, "newborn", t, ext_vertex)
        sad = self._new_trace("saddle", "newborn", t, sad_vertex)
        ext.birth_mate = sad.id
        sad.birth_mate = ext.id
        self.extremum_at[ext_vertex] = ext
        self.saddles_at.setdefault(sad_vertex, []).append(sad)
        return (ext.id, sad.id)

    def apply(self, t, layer, a, b, before, after):
        ba, bb = before
        aa, ab = after
        effect = _event_effect(ba, bb, aa, ab)
        if effect is None:
            return
        primitive, detail = effect
        ends = (a, b)
        edge = (a, b)
        if primitive == "displacement":
            what, src, dst = detail
            if what == "saddle":
                ids = self._move_saddle(ends[src], ends[dst], t, edge)
            else:
                ids = self._move_extremum(ends[src], ends[dst], t, edge)
        elif primitive == "collapse":
            ext_side, sad_side = detail
            ids = self._collapse(ends[ext_side], ends[sad_side], t, edge)
        else:
            ext_side, sad_side = detail
            ext_code = aa if ext_side == 0 else ab
            ids = self._appear(ends[ext_side], ends[sad_side], ext_code, t, edge)
        compound = any(saddle_multiplicity(c) >= 2 for c in (ba, bb, aa, ab))
        self.transitions.append(
            TransitionRecord(
                t=t,
                layer=layer,
                edge=edge,
                kind="compound" if compound else primitive,
                primitive=primitive,
                before=(ba, bb),
                after=(aa, ab),
                trace_ids=ids,
            )
        )


def track_scale_space(ss: ScaleSpace, record_invariant_trace=False) -> TrackResult:
    """Track every critical point through all layer pairs of a scale space.

    Costs O(E) per layer pair for detection plus ring-sized work per event.
    The alternating-count invariant is asserted after every event, and the
    per-edge orientation state is cross-checked against each fresh layer.
    """
    if ss.num_layers < 1:
        raise ValueError("scale space needs at least two layers")
    cm = build_closure(ss.tin)
    tracker = _Tracker(cm, record_invariant_trace)
    flat = tracker.flat

    state = _initial_state(cm, ss.layers[0])
    codes = np.array(
        [flat.code(v, state) for v in range(cm.n_vertices)], dtype=np.int64
    )
    initial_codes = codes.copy()
    tracker.seed(codes)

    edges = cm.edges
    real = edges[: cm.n_real_edges]
    eid_of = {}
    for i, (ea, eb) in enumerate(real):
        eid_of[(int(ea), int(eb))] = i

    events_per_layer = []
    for layer in range(ss.num_layers):
        t_arr, fa, fb = _flip_arrays(
            ss.layers[layer], ss.layers[layer + 1], real[:, 0], real[:, 1], layer
        )
        events_per_layer.append(len(t_arr))
        for t, a, b in zip(t_arr, fa, fb):
            a = int(a)
            b = int(b)
            eid = eid_of[(a, b)]
            before = (int(codes[a]), int(codes[b]))
            state[eid] ^= 1
            codes[a] = flat.code(a, state)
            codes[b] = flat.code(b, state)
            after = (int(codes[a]), int(codes[b]))
            tracker.apply(float(t), layer, a, b, before, after)
            tracker.total_index += (
                index_contribution(after[0])
                + index_contribution(after[1])
                - index_contribution(before[0])
                - index_contribution(before[1])
            )
            if tracker.total_index != 2 * cm.n_components:
                raise AssertionError("alternating count drifted during tracking")
            if tracker.invariant_trace is not None:
                tracker.invariant_trace.append(tracker.total_index)
        # The evolved state must agree with the next layer's fresh order.
        fresh = _initial_state(cm, ss.layers[layer + 1])
        if not np.array_equal(fresh, state):
            raise AssertionError("edge state inconsistent at layer boundary")

    return TrackResult(
        traces=tracker.traces,
        transitions=tracker.transitions,
        initial_codes=initial_codes,
        closure=cm,
        num_layers=ss.num_layers,
        events_per_layer=events_per_layer,
        invariant_trace=tracker.invariant_trace,
    )


# -------------------------------------------------------------- life spans


def recover_life_spans(result: TrackResult, num_layers=None) -> LifeSpanTable:
    """Life spans of the initial critical points with birth-mate substitution.

    When an initial point collapses with a newborn whose birth mate is still
    alive, the mate continues the feature; the chain ends at the end of the
    scale space or at a collapse that cannot be substituted.
    """
    L = float(num_layers if num_layers is not None else result.num_layers)
    traces = result.traces
    records = []
    for p in traces:
        if p.origin != "initial" or p.synthetic:
            continue
        cur = p
        seen_pairs = set()
        while True:
            if cur.death_t is None:
                records.append(LifeSpanRecord(p.id, L, "survived"))
                break
            t_dead = cur.death_t
            mate = traces[cur.death_mate]
            if mate.origin == "initial":
                records.append(LifeSpanRecord(p.id, t_dead, "collapsed_with_initial"))
                break
            substitute = traces[mate.birth_mate]
            if substitute.death_t is not None and substitute.death_t <= t_dead:
                # The would-be substitute is already gone; the feature ends here.
                records.append(LifeSpanRecord(p.id, t_dead, "collapsed_with_initial"))
                break
            pair = (min(mate.id, substitute.id), max(mate.id, substitute.id))
            if pair in seen_pairs:
                raise AssertionError("cyclic birth-mate substitution")
            seen_pairs.add(pair)
            cur = substitute
    for rec in records:
        if not 0.0 < rec.life_span <= L:
            raise AssertionError(f"life span {rec.life_span} outside (0, {L}]")
    return LifeSpanTable(records=sorted(records, key=lambda r: r.trace_id))


# ----------------------------------------------------------------- output


def feature_rows(result: TrackResult, life: LifeSpanTable):
    """Feature table rows: one per tracked (non-synthetic) critical point."""
    tin = result.closure.tin
    by_id = {r.trace_id: r for r in life.records}
    rows = []
    for tr in result.traces:
        if tr.synthetic:
            continue
        if tr.id in by_id:
            span = by_id[tr.id].life_span
        else:
            span = (tr.death_t if tr.death_t is not None else float(result.num_layers)) - tr.birth_t
        x, y, z = tin.vertices[tr.birth_vertex]
        rows.append(
            {
                "id": tr.id,
                "x": float(x),
                "y": float(y),
                "z": float(z),
                "kind": tr.kind,
                "origin": tr.origin,
                "birth_t": tr.birth_t,
                "death_t": tr.death_t,
                "life_span": float(span),
            }
        )
    return rows


def write_features_csv(rows, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("id,x,y,z,kind,origin,birth_t,death_t,life_span\n")
        for r in rows:
            death = "" if r["death_t"] is None else repr(float(r["death_t"]))
            fh.write(
                f"{r['id']},{r['x']!r},{r['y']!r},{r['z']!r},{r['kind']},"
                f"{r['origin']},{r['birth_t']!r},{death},{r['life_span']!r}\n"
            )
    os.replace(tmp, path)


def write_transitions_csv(transitions, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("t,layer,edge_m,edge_n,kind,before_m,before_n,after_m,after_n,trace_ids\n")
        for rec in transitions:
            ids = ";".join(str(i) for i in rec.trace_ids)
            fh.write(
                f"{rec.t!r},{rec.layer},{rec.edge[0]},{rec.edge[1]},{rec.kind},"
                f"{kind_name(rec.before[0])},{kind_name(rec.before[1])},"
                f"{kind_name(rec.after[0])},{kind_name(rec.after[1])},{ids}\n"
            )
    os.replace(tmp, path)


def write_features_geojson(rows, path):
    features = []
    for r in rows:
        props = {k: r[k] for k in ("id", "kind", "origin", "birth_t", "death_t", "life_span")}
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r["x"], r["y"], r["z"]]},
                "properties": props,
            }
        )
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def select_maxima(result: TrackResult, life: LifeSpanTable):
    """Initial maxima with recovered life spans, for evaluation."""
    tin = result.closure.tin
    out = []
    for rec in life.records:
        tr = result.traces[rec.trace_id]
        if tr.kind != "maximum":
            continue
        x, y, _ = tin.vertices[tr.birth_vertex]
        out.append((tr.id, float(x), float(y), rec.life_span))
    return out
