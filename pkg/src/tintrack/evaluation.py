"""Scoring of tracked maxima against surveyed spot heights.

Matching is greedy one-to-one: maxima ordered by descending life span each
claim their nearest unclaimed spot within the match radius. Precision counts
matched maxima over all candidate maxima, recall over all spots.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class GroundTruth:
    xy: np.ndarray  # (N, 2)
    names: tuple
    is_named_peak: tuple

    def __len__(self):
        return len(self.xy)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (maximum id, spot index, distance)
    unmatched_maxima: tuple
    unmatched_spots: tuple
    precision: float
    recall: float
    dist_avg: float


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f_beta: float


@dataclass(frozen=True)
class PrCurve:
    points: tuple
    best: PrPoint


def load_ground_truth(path) -> GroundTruth:
    """CSV with header x,y,name,is_named_peak (name may be empty)."""
    xy, names, named = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty ground truth")
        cols = {c.strip().lower(): c for c in reader.fieldnames}
        for needed in ("x", "y"):
            if needed not in cols:
                raise DataError(f"{path}: ground truth needs x,y columns")
        for rec in reader:
            try:
                xy.append((float(rec[cols["x"]]), float(rec[cols["y"]])))
            except (TypeError, ValueError):
                raise DataError(f"{path}:{reader.line_num}: bad coordinate") from None
            names.append(rec.get(cols.get("name", ""), "") or "")
            flag = (rec.get(cols.get("is_named_peak", ""), "") or "").strip().lower()
            named.append(flag in ("1", "true", "yes"))
    if not xy:
        raise DataError(f"{path}: no ground-truth spots")
    arr = np.asarray(xy, dtype=np.float64)
    if len(np.unique(arr, axis=0)) != len(arr):
        raise DataError(f"{path}: duplicate ground-truth locations")
    return GroundTruth(xy=arr, names=tuple(names), is_named_peak=tuple(named))


def match_maxima(maxima, gt: GroundTruth, radius: float = 50.0) -> MatchResult:
    """Greedy one-to-one matching of maxima to spots within ``radius`` meters.

    ``maxima`` is a sequence of (id, x, y, life_span). Longer-lived maxima
    claim first (ties by id), each taking its nearest free spot.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if len(gt) == 0:
        raise DataError("empty ground truth")
    order = sorted(maxima, key=lambda m: (-m[3], m[0]))
    free = np.ones(len(gt), dtype=bool)
    pairs = []
    unmatched = []
    for mid, x, y, _span in order:
        d = np.hypot(gt.xy[:, 0] - x, gt.xy[:, 1] - y)
        d[~free] = np.inf
        spot = int(np.argmin(d))
        if d[spot] <= radius:
            free[spot] = False
            pairs.append((mid, spot, float(d[spot])))
        else:
            unmatched.append(mid)
    n = len(order)
    precision = len(pairs) / n if n else 0.0
    recall = len(pairs) / len(gt)
    dist_avg = float(np.mean([p[2] for p in pairs])) if pairs else 0.0
    return MatchResult(
        pairs=tuple(sorted(pairs)),
        unmatched_maxima=tuple(sorted(unmatched)),
        unmatched_spots=tuple(int(i) for i in np.nonzero(free)[0]),
        precision=precision,
        recall=recall,
        dist_avg=dist_avg,
    )


def f_beta(precision: float, recall: float, beta: float = 0.5) -> float:
    """Weighted harmonic mean of precision and recall; 0 on a zero denominator."""
    den = beta * beta * precision + recall
    if den == 0.0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / den


def pr_sweep(maxima, gt: GroundTruth, radius: float = 50.0, beta: float = 0.5) -> PrCurve:
    """Precision/recall/F-score at every distinct life-span threshold."""
    maxima = list(maxima)
    if not maxima:
        raise DataError("no maxima to sweep")
    thresholds = sorted({m[3] for m in maxima})
    points = []
    for th in thresholds:
        kept = [m for m in maxima if m[3] >= th]
        if kept:
            res = match_maxima(kept, gt, radius)
            p, r = res.precision, res.recall
        else:
            p, r = 0.0, 0.0
        points.append(PrPoint(threshold=th, precision=p, recall=r, f_beta=f_beta(p, r, beta)))
    best = max(points, key=lambda pt: (pt.f_beta, -pt.threshold))
    return PrCurve(points=tuple(points), best=best)


def write_pr_csv(curve: PrCurve, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("threshold,precision,recall,f_beta\n")
        for pt in curve.points:
            fh.write(f"{pt.threshold!r},{pt.precision!r},{pt.recall!r},{pt.f_beta!r}\n")
    os.replace(tmp, path)
