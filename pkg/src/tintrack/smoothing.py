"""Iterated Gaussian-style smoothing of TIN elevations and the scale space.

One smoothing step averages each vertex with its ring under weights
``exp(-d^2 / (2 sigma_small^2))`` (distances in the xy-plane, self weight 1),
optionally corrected for the irregular mesh:

* virtual neighbors: a neighbor farther than ``tau`` is replaced by a point
  at distance ``tau`` along the edge. Its weight is folded algebraically into
  the operator (fraction ``tau/d`` on the neighbor column, the rest on the
  diagonal), which is exactly smoothing against the linearly interpolated
  elevation at that point.
* angle re-weighting: each neighbor weight is scaled by the mean of the two
  ring angles it subtends at the center, compensating for direction bias on
  unevenly distributed rings.

Rows are normalized last, so every step is a convex combination: constants
are fixed points and global extrema cannot overshoot.

Scheduling note: the per-step variance actually added by a 1-ring operator is
its second moment, which is smaller than the nominal ``sigma_small^2`` because
the kernel is truncated at the ring. The default "calibrated" mode measures
the second moment and uses it to decide how many steps reach a target
variance; "nominal" trusts ``sigma_small^2``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .tin import Tin

VARIANCE_MODES = ("calibrated", "nominal")


@dataclass(frozen=True)
class SmoothingConfig:
    sigma_small: float | None = None  # default: median edge length
    tau: float | None = None  # default: 2x median edge length
    angle_reweight: bool = True
    virtual_neighbors: bool = True
    num_layers: int = 4
    variance_mode: str = "calibrated"

    def __post_init__(self):
        if self.sigma_small is not None and not self.sigma_small > 0:
            raise ValueError("sigma_small must be positive")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")

    def resolved(self, tin: Tin) -> "SmoothingConfig":
        """Fill mesh-derived defaults for sigma_small and tau."""
        if self.sigma_small is not None and self.tau is not None:
            return self
        med = tin.median_edge_length()
        if med <= 0:
            raise DataError("mesh has zero median edge length")
        return SmoothingConfig(
            sigma_small=self.sigma_small if self.sigma_small is not None else med,
            tau=self.tau if self.tau is not None else 2.0 * med,
            angle_reweight=self.angle_reweight,
            virtual_neighbors=self.virtual_neighbors,
            num_layers=self.num_layers,
            variance_mode=self.variance_mode,
        )


@dataclass
class ScaleSpace:
    tin: Tin
    layers: np.ndarray  # (L + 1, V); layer 0 is the input
    layer_variances: np.ndarray  # nominal cumulative variance per layer
    steps_per_layer: list
    step_variance: float
    config: SmoothingConfig

    @property
    def num_layers(self) -> int:
        """L: the number of smoothed layers beyond the input."""
        return len(self.layers) - 1


def _ring_angles(tin: Tin, v):
    """Angle weights for the ring of v: mean of the adjacent sector angles.

    Sector k lies between ring neighbors k and k+1 and is an interior angle
    of their shared triangle, hence < pi; arccos of the normalized dot is
    safe. Boundary rings have no wrap sector, so the chain ends carry their
    single adjacent angle.
    """
    ring = tin.neighbors[v]
    m = len(ring)
    if m == 1:
        return np.ones(1)
    vec = tin.vertices[ring, :2] - tin.vertices[v, :2]
    vec = vec / np.linalg.norm(vec, axis=1)[:, None]
    dots = np.clip((vec * np.roll(vec, -1, axis=0)).sum(axis=1), -1.0, 1.0)
    sect = np.arccos(dots)  # sect[k] between ring[k] and ring[k+1 mod m]
    if tin.boundary[v]:
        theta = np.empty(m)
        theta[0] = sect[0]
        theta[-1] = sect[m - 2]
        if m > 2:
            theta[1:-1] = 0.5 * (sect[: m - 2] + sect[1 : m - 1])
    else:
        theta = 0.5 * (sect + np.roll(sect, 1))
    return theta


def build_weight_matrix(tin: Tin, cfg: SmoothingConfig) -> sp.csr_matrix:
    """Row-stochastic one-step smoothing operator as a CSR matrix."""
    cfg = cfg.resolved(tin)
    sigma2 = cfg.sigma_small**2
    n = tin.num_vertices
    rows, cols, vals = [], [], []
    diag = np.ones(n)  # self weight exp(0) per row
    for v in range(n):
        ring = tin.neighbors[v]
        if len(ring) == 0:
            continue
        d = np.hypot(
            tin.vertices[ring, 0] - tin.vertices[v, 0],
            tin.vertices[ring, 1] - tin.vertices[v, 1],
        )
        eff = d.copy()
        frac = np.ones(len(ring))
        if cfg.virtual_neighbors:
            far = d > cfg.tau
            eff[far] = cfg.tau
            frac[far] = cfg.tau / d[far]
        w = np.exp(-(eff**2) / (2.0 * sigma2))
        if cfg.angle_reweight:
            w = w * _ring_angles(tin, v)
        rows.append(np.full(len(ring), v, dtype=np.int64))
        cols.append(ring)
        vals.append(w * frac)
        diag[v] += float((w * (1.0 - frac)).sum())
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    inv_rowsum = 1.0 / np.asarray(mat.sum(axis=1)).ravel()
    return (sp.diags(inv_rowsum) @ mat).tocsr()


class _ExactStep:
    """One smoothing application in difference form.

    Evaluating z_i + sum_j w_ij (z_j - z_i) instead of the raw matvec makes
    constant fields exact fixed points (every term is exactly zero) and keeps
    global extrema monotone to float precision.
    """

    def __init__(self, weights: sp.csr_matrix):
        coo = weights.tocoo()
        off = coo.row != coo.col
        self.row = coo.row[off]
        self.col = coo.col[off]
        self.val = coo.data[off]
        self.n = weights.shape[0]

    def __call__(self, z):
        corr = np.bincount(
            self.row, weights=self.val * (z[self.col] - z[self.row]), minlength=self.n
        )
        return z + corr


def smooth_step(weights: sp.csr_matrix, values):
    """One smoothing application of the row-stochastic operator."""
    z = np.asarray(values, dtype=np.float64)
    if z.shape[0] != weights.shape[0]:
        raise ValueError("value vector length does not match the operator")
    return _ExactStep(weights)(z)


def effective_step_variance(tin: Tin, weights: sp.csr_matrix) -> float:
    """Mean per-axis second moment of the operator rows.

    This is the variance one application actually adds to a smooth field,
    which is what the layer schedule must budget against.
    """
    coo = weights.tocoo()
    xy = tin.vertices[:, :2]
    d2 = ((xy[coo.row] - xy[coo.col]) ** 2).sum(axis=1)
    per_row = np.zeros(weights.shape[0])
    np.add.at(per_row, coo.row, coo.data * d2)
    return float(per_row.mean() / 2.0)


def _step_variance(tin: Tin, weights, cfg: SmoothingConfig) -> float:
    if cfg.variance_mode == "nominal":
        return cfg.sigma_small**2
    return effective_step_variance(tin, weights)


def smooth_added_variance(tin: Tin, values, added_variance, cfg: SmoothingConfig, weights=None):
    """Smooth until at least ``added_variance`` has been applied.

    Returns ``(smoothed, n_steps)``; the realized variance is
    ``n_steps * step_variance`` which overshoots by less than one step.
    """
    cfg = cfg.resolved(tin)
    if weights is None:
        weights = build_weight_matrix(tin, cfg)
    if added_variance <= 0:
        return np.asarray(values, dtype=np.float64).copy(), 0
    step_var = _step_variance(tin, weights, cfg)
    n_steps = max(1, math.ceil(added_variance / step_var - 1e-12))
    step = _ExactStep(weights)
    z = np.asarray(values, dtype=np.float64)
    for _ in range(n_steps):
        z = step(z)
    return z, n_steps


def build_scale_space(tin: Tin, elevations, cfg: SmoothingConfig) -> ScaleSpace:
    """Stack of smoothed layers at cumulative variances 2^i, i = 1..L."""
    cfg = cfg.resolved(tin)
    z0 = np.asarray(elevations, dtype=np.float64)
    if len(z0) != tin.num_vertices:
        raise ValueError("elevation vector length does not match the mesh")
    weights = build_weight_matrix(tin, cfg)
    step_var = _step_variance(tin, weights, cfg)
    step = _ExactStep(weights)
    layers = [z0.copy()]
    variances = [0.0]
    steps = []
    z = z0.copy()
    for i in range(1, cfg.num_layers + 1):
        target = 2.0**i
        delta = target - variances[-1]
        n_steps = max(1, math.ceil(delta / step_var - 1e-12))
        for _ in range(n_steps):
            z = step(z)
        layers.append(z.copy())
        variances.append(target)
        steps.append(n_steps)
    return ScaleSpace(
        tin=tin,
        layers=np.asarray(layers),
        layer_variances=np.asarray(variances),
        steps_per_layer=steps,
        step_variance=step_var,
        config=cfg,
    )


def interpolate_layer(ss: ScaleSpace, t: float):
    """Elevations at a fractional timestamp, linear between layers."""
    L = ss.num_layers
    if not 0.0 <= t <= L:
        raise ValueError(f"timestamp {t} outside [0, {L}]")
    if t == L:
        return ss.layers[L].copy()
    i = int(math.floor(t))
    delta = t - i
    return (1.0 - delta) * ss.layers[i] + delta * ss.layers[i + 1]


# ------------------------------------------------------------------ store


def save_scale_space(ss: ScaleSpace, dirpath):
    """Persist layers as little-endian float64 files plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    layer_files = []
    for i, layer in enumerate(ss.layers):
        name = f"layer_{i:03d}.f64"
        tmp = os.path.join(dirpath, name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(np.ascontiguousarray(layer, dtype="<f8").tobytes())
        os.replace(tmp, os.path.join(dirpath, name))
        layer_files.append(name)
    manifest = {
        "vertices": int(ss.layers.shape[1]),
        "num_layers": int(ss.num_layers),
        "layer_variances": [float(v) for v in ss.layer_variances],
        "steps_per_layer": [int(s) for s in ss.steps_per_layer],
        "step_variance": float(ss.step_variance),
        "config": asdict(ss.config),
        "layer_files": layer_files,
    }
    tmp = os.path.join(dirpath, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(dirpath, "manifest.json"))


def load_scale_space(dirpath, tin: Tin) -> ScaleSpace:
    path = os.path.join(dirpath, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{dirpath}: missing scale-space manifest") from None
    nv = manifest["vertices"]
    if nv != tin.num_vertices:
        raise DataError(
            f"scale space built for {nv} vertices, mesh has {tin.num_vertices}"
        )
    layers = []
    for name in manifest["layer_files"]:
        with open(os.path.join(dirpath, name), "rb") as fh:
            layer = np.frombuffer(fh.read(), dtype="<f8")
        if len(layer) != nv:
            raise DataError(f"{name}: expected {nv} values, got {len(layer)}")
        layers.append(layer.astype(np.float64))
    cfg = SmoothingConfig(**manifest["config"])
    return ScaleSpace(
        tin=tin,
        layers=np.asarray(layers),
        layer_variances=np.asarray(manifest["layer_variances"], dtype=np.float64),
        steps_per_layer=list(manifest["steps_per_layer"]),
        step_variance=float(manifest["step_variance"]),
        config=cfg,
    )
