"""Terrain point cloud ingestion and curvature-adaptive downsampling.

A cloud is a ``(N, 3)`` float array of ``x y z`` in meters. Loading removes
duplicate ``(x, y)`` sites (keeping the highest ``z``) because the later
triangulation requires distinct sites.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .kernels import fps_select

SAMPLERS = ("pfps", "fps", "random", "voxel")
CURVATURE_MODES = ("surface_variation", "largest_eigenvalue")


def thread_count() -> int:
    """Worker count for data-parallel stages, from ``TINTRACK_THREADS``."""
    try:
        return max(1, int(os.environ.get("TINTRACK_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class DownsampleConfig:
    patch_size: float = 20.0
    keep_ratio: float = 0.25
    sampler: str = "pfps"
    curvature_mode: str = "surface_variation"
    rng_seed: int = 0

    def __post_init__(self):
        if not self.patch_size > 0:
            raise ValueError("patch_size must be positive")
        if not 0 < self.keep_ratio <= 1:
            raise ValueError("keep_ratio must be in (0, 1]")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ValueError(f"curvature_mode must be one of {CURVATURE_MODES}")


@dataclass
class Patch:
    """Points of one square cell, plus curvature statistics filled by pfps."""

    cell: tuple[int, int]
    indices: np.ndarray
    points: np.ndarray
    eigenvalues: tuple[float, float, float] = (0.0, 0.0, 0.0)
    curvature: float = 0.0
    weight: float = 0.0


# ---------------------------------------------------------------- loading


def _parse_fields(fields, path, lineno):
    if len(fields) != 3:
        raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
    try:
        x, y, z = (float(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric field") from None
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise DataError(f"{path}:{lineno}: non-finite coordinate")
    return x, y, z


def _read_xyz(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            rows.append(_parse_fields(stripped.split(), path, lineno))
    return rows


def _read_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        try:
            cols = [names.index(c) for c in ("x", "y", "z")]
        except ValueError:
            raise DataError(f"{path}: header must name x,y,z columns") from None
        for record in reader:
            if not record or all(not f.strip() for f in record):
                continue
            if max(cols) >= len(record):
                raise DataError(f"{path}:{reader.line_num}: short record")
            rows.append(
                _parse_fields([record[c] for c in cols], path, reader.line_num)
            )
    return rows


def dedupe_xy(points):
    """Drop repeated (x, y) sites keeping the highest z.

    First-occurrence order is preserved. Returns ``(cloud, dropped_count)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3), 0
    uniq, inverse = np.unique(pts[:, :2], axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if len(uniq) == len(pts):
        return pts.copy(), 0
    z = np.full(len(uniq), -np.inf)
    np.maximum.at(z, inverse, pts[:, 2])
    first = np.full(len(uniq), len(pts))
    np.minimum.at(first, inverse, np.arange(len(pts)))
    order = np.argsort(first, kind="stable")
    out = np.column_stack([uniq[order], z[order]])
    return out, len(pts) - len(uniq)


def load_points(path, fmt: str | None = None):
    """Load an XYZ or CSV point file.

    Format is inferred from the extension unless given. Returns the
    deduplicated cloud and the number of duplicate (x, y) rows dropped.
    """
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "xyz"
    fmt = fmt.lower()
    if fmt == "xyz":
        rows = _read_xyz(path)
    elif fmt == "csv":
        rows = _read_csv(path)
    else:
        raise ValueError(f"unknown point format {fmt!r}")
    if not rows:
        raise DataError(f"{path}: no points found")
    return dedupe_xy(np.asarray(rows, dtype=np.float64))


def save_points(points, path):
    """Write a cloud in XYZ format (one ``x y z`` line per point)."""
    pts = np.asarray(points, dtype=np.float64)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for x, y, z in pts:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------- patches


def subdivide(points, patch_size):
    """Partition a cloud into square cells by floor division of (x, y).

    Cell index is (row, col) = (floor(y/s), floor(x/s)); empty cells are
    omitted and patches come back sorted by cell index.
    """
    if not patch_size > 0:
        raise ValueError("patch_size must be positive")
    pts = np.asarray(points, dtype=np.float64)
    cells = np.floor_divide(pts[:, :2], patch_size).astype(np.int64)
    rowcol = cells[:, ::-1]
    uniq, inverse = np.unique(rowcol, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    patches = []
    for k, cell in enumerate(uniq):
        idx = np.nonzero(inverse == k)[0]
        patches.append(Patch(cell=(int(cell[0]), int(cell[1])), indices=idx, points=pts[idx]))
    return patches


def estimate_patch_curvature(patch, mode="surface_variation"):
    """Eigenvalue-ratio curvature of a patch (0 for degenerate patches).

    ``largest_eigenvalue`` uses the largest-eigenvalue share of the 3x3 covariance;
    ``surface_variation`` (default) uses the smallest, which is what actually
    vanishes on flat ground. Fills ``patch.eigenvalues`` as a side effect when
    given a Patch. Accepts a Patch or a raw (n, 3) array.
    """
    pts = patch.points if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    if mode not in CURVATURE_MODES:
        raise ValueError(f"curvature_mode must be one of {CURVATURE_MODES}")
    if len(pts) < 3:
        return 0.0
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    ev = np.linalg.eigvalsh(cov)[::-1]
    ev = np.clip(ev, 0.0, None)
    total = float(ev.sum())
    if isinstance(patch, Patch):
        patch.eigenvalues = (float(ev[0]), float(ev[1]), float(ev[2]))
    if total <= 0.0:
        return 0.0
    lam = ev[0] if mode == "largest_eigenvalue" else ev[2]
    return float(lam / total)


def _largest_remainder(raw, target):
    base = np.floor(raw).astype(np.int64)
    remaining = target - int(base.sum())
    if remaining > 0:
        frac = raw - base
        order = np.lexsort((np.arange(len(raw)), -frac))
        base[order[:remaining]] += 1
    return base


def patch_quotas(weights, sizes, keep_ratio, total_points):
    """Allocate round(keep_ratio * total) points across patches by weight.

    Largest-remainder rounding keeps the sum on target; budget that would
    exceed a patch's size is redistributed, so keep_ratio 1 keeps everything.
    Each final quota lies in [1, patch size].
    """
    weights = np.asarray(weights, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    target = int(round(keep_ratio * total_points))
    if target <= 0:
        raise DataError("keep_ratio too small: zero-point sampling budget")
    quotas = np.zeros(len(weights), dtype=np.int64)
    active = np.ones(len(weights), dtype=bool)
    budget = min(target, int(sizes.sum()))
    while budget > 0 and active.any():
        w = weights[active]
        total_w = w.sum()
        share = w / total_w if total_w > 0 else np.full(len(w), 1.0 / len(w))
        alloc = _largest_remainder(share * budget, budget)
        over = alloc > sizes[active]
        if not over.any():
            quotas[active] = alloc
            break
        idx = np.nonzero(active)[0]
        full = idx[over]
        quotas[full] = sizes[full]
        budget -= int(sizes[full].sum())
        active[full] = False
    return np.minimum(np.maximum(quotas, 1), sizes)


# ---------------------------------------------------------------- sampling


def fps(points, count, seed_index=0):
    """Farthest point sampling on the xy-plane; returns selected indices.

    Deterministic: the seed is picked first and distance ties go to the
    lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if not 1 <= count <= len(pts):
        raise ValueError(f"count must be in [1, {len(pts)}], got {count}")
    if not 0 <= seed_index < len(pts):
        raise ValueError("seed_index out of range")
    xy = np.ascontiguousarray(pts[:, :2])
    return np.asarray(fps_select(xy, int(count), int(seed_index)))


def _patch_weights(patches, mode):
    for p in patches:
        p.curvature = estimate_patch_curvature(p, mode)
    total = sum(p.curvature for p in patches)
    if total <= 0.0:
        # Entirely flat terrain: fall back to a uniform budget.
        for p in patches:
            p.weight = 1.0 / len(patches)
    else:
        for p in patches:
            p.weight = p.curvature / total


def pfps(points, cfg: DownsampleConfig):
    """Patch-based farthest point sampling.

    Curvature-weighted quotas concentrate the budget in rough cells; FPS runs
    independently inside each patch, seeded at the patch's first point.
    """
    pts = np.asarray(points, dtype=np.float64)
    patches = subdivide(pts, cfg.patch_size)
    _patch_weights(patches, cfg.curvature_mode)
    sizes = np.array([len(p.points) for p in patches])
    quotas = patch_quotas([p.weight for p in patches], sizes, cfg.keep_ratio, len(pts))

    def sample(args):
        patch, quota = args
        return patch.indices[fps(patch.points, int(quota))]

    workers = thread_count()
    jobs = list(zip(patches, quotas))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            picked = list(pool.map(sample, jobs))
    else:
        picked = [sample(j) for j in jobs]
    return pts[np.concatenate(picked)]


def _voxel_sample(pts, cell_size):
    cells = np.floor_divide(pts[:, :2], cell_size).astype(np.int64)
    uniq, inverse = np.unique(cells[:, ::-1], axis=0, return_inverse=True)
    inverse = inverse.ravel()
    keep = []
    for k in range(len(uniq)):
        idx = np.nonzero(inverse == k)[0]
        centroid = pts[idx].mean(axis=0)
        local = np.argmin(((pts[idx] - centroid) ** 2).sum(axis=1))
        keep.append(idx[local])
    return pts[np.array(keep)]


def baseline_sample(points, cfg: DownsampleConfig):
    """Reference samplers: uniform random, voxel-representative, global FPS."""
    pts = np.asarray(points, dtype=np.float64)
    if cfg.sampler == "random":
        count = min(len(pts), max(1, int(round(cfg.keep_ratio * len(pts)))))
        rng = np.random.default_rng(cfg.rng_seed)
        idx = np.sort(rng.choice(len(pts), size=count, replace=False))
        return pts[idx]
    if cfg.sampler == "voxel":
        return _voxel_sample(pts, cfg.patch_size)
    if cfg.sampler == "fps":
        count = min(len(pts), max(1, int(round(cfg.keep_ratio * len(pts)))))
        return pts[fps(pts, count, 0)]
    raise ValueError(f"baseline_sample does not handle sampler {cfg.sampler!r}")


def downsample(points, cfg: DownsampleConfig):
    """Dispatch to pfps or one of the baseline samplers."""
    if cfg.sampler == "pfps":
        return pfps(points, cfg)
    return baseline_sample(points, cfg)
