"""Command line pipeline: downsample, triangulate, smooth, track, evaluate.

Options come from defaults, then an optional flat ``key = value`` config
file, then command-line flags (flags win). Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import resource
import sys
import time

import numpy as np

from . import evaluation, pointcloud, smoothing, tin as tinmod, tracking
from .errors import DataError

_CONFIG_KEYS = {
    "input": str,
    "output_dir": str,
    "format": str,
    "sampler": str,
    "patch_size": float,
    "keep_ratio": float,
    "curvature_mode": str,
    "alpha": float,
    "sigma_small": float,
    "tau": float,
    "virtual_neighbors": bool,
    "angle_reweight": bool,
    "layers": int,
    "variance_mode": str,
    "radius": float,
    "beta": float,
    "seed": int,
    "resolutions": str,
    "ground_truth": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_bool(text):
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path):
    """Flat ``key = value`` lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, _, raw = body.partition("=")
            key = key.strip().lower()
            raw = raw.strip()
            if key not in _CONFIG_KEYS:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
            caster = _CONFIG_KEYS[key]
            try:
                values[key] = _parse_bool(raw) if caster is bool else caster(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad value for {key}") from None
    return values


def _setting(args, config, key, default=None):
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in config:
        return config[key]
    return default


def _downsample_cfg(args, config, sampler):
    return pointcloud.DownsampleConfig(
        patch_size=_setting(args, config, "patch_size", 20.0),
        keep_ratio=_setting(args, config, "keep_ratio", 0.25),
        sampler=sampler,
        curvature_mode=_setting(args, config, "curvature_mode", "surface_variation"),
        rng_seed=_setting(args, config, "seed", 0),
    )


def _smoothing_cfg(args, config):
    return smoothing.SmoothingConfig(
        sigma_small=_setting(args, config, "sigma_small"),
        tau=_setting(args, config, "tau"),
        angle_reweight=_setting(args, config, "angle_reweight", True),
        virtual_neighbors=_setting(args, config, "virtual_neighbors", True),
        num_layers=_setting(args, config, "layers", 4),
        variance_mode=_setting(args, config, "variance_mode", "calibrated"),
    )


def _write_json(payload, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _ensure_outdir(args, config):
    out = _setting(args, config, "output_dir")
    if not out:
        raise DataError("no output directory given (use --output-dir)")
    os.makedirs(out, exist_ok=True)
    return out


def _load_cloud(args, config):
    path = _setting(args, config, "input")
    if not path:
        raise DataError("no input file given (use --input)")
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    return pointcloud.load_points(path, _setting(args, config, "format"))


# ------------------------------------------------------------- subcommands


def cmd_downsample(args, config):
    out = _ensure_outdir(args, config)
    cloud, dropped = _load_cloud(args, config)
    samplers = [s.strip() for s in (args.sampler or config.get("sampler", "pfps")).split(",")]
    report = {"input_points": int(len(cloud)), "duplicates_dropped": int(dropped), "outputs": {}}
    for name in samplers:
        cfg = _downsample_cfg(args, config, name)
        sampled = pointcloud.downsample(cloud, cfg)
        dest = os.path.join(out, f"points_{name}.xyz")
        pointcloud.save_points(sampled, dest)
        report["outputs"][name] = {"count": int(len(sampled)), "file": dest}
        print(f"{name}: kept {len(sampled)} of {len(cloud)} points -> {dest}")
    _write_json(report, os.path.join(out, "downsample_report.json"))
    return 0


def cmd_triangulate(args, config):
    out = _ensure_outdir(args, config)
    cloud, _ = _load_cloud(args, config)
    mesh = tinmod.delaunay_triangulate(cloud)
    removed = 0
    alpha = _setting(args, config, "alpha")
    if alpha is not None and math.isfinite(alpha):
        before = len(mesh.triangles)
        mesh = tinmod.alpha_shape_filter(mesh, tinmod.AlphaShapeConfig(alpha=alpha))
        removed = before - len(mesh.triangles)
    dest = os.path.join(out, "tin.txt")
    tinmod.save_tin(mesh, dest)
    report = {
        "vertices": int(mesh.num_vertices),
        "edges": int(mesh.num_edges),
        "triangles": int(len(mesh.triangles)),
        "components": int(mesh.num_components()),
        "triangles_removed_by_alpha": int(removed),
        "file": dest,
    }
    _write_json(report, os.path.join(out, "tin_report.json"))
    print(
        f"tin: {report['vertices']} vertices, {report['edges']} edges, "
        f"{report['triangles']} triangles, {report['components']} component(s)"
    )
    return 0


def _load_tin_arg(args, config):
    path = getattr(args, "tin", None) or config.get("tin")
    if not path:
        raise DataError("no TIN file given (use --tin)")
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    return tinmod.load_tin(path)


def cmd_smooth(args, config):
    out = _ensure_outdir(args, config)
    mesh = _load_tin_arg(args, config)
    cfg = _smoothing_cfg(args, config)
    ss = smoothing.build_scale_space(mesh, mesh.vertices[:, 2], cfg)
    dest = os.path.join(out, "scalespace")
    smoothing.save_scale_space(ss, dest)
    print(
        f"scale space: {ss.num_layers} layers over {mesh.num_vertices} vertices, "
        f"steps {ss.steps_per_layer} -> {dest}"
    )
    return 0


def cmd_track(args, config):
    out = _ensure_outdir(args, config)
    mesh = _load_tin_arg(args, config)
    ss_dir = getattr(args, "scale_space", None) or config.get("scale_space") or os.path.join(out, "scalespace")
    if not os.path.isdir(ss_dir):
        raise DataError(f"{ss_dir}: missing scale space directory")
    ss = smoothing.load_scale_space(ss_dir, mesh)
    t0 = time.perf_counter()
    result = tracking.track_scale_space(ss)
    elapsed = time.perf_counter() - t0
    life = tracking.recover_life_spans(result)
    rows = tracking.feature_rows(result, life)
    tracking.write_features_csv(rows, os.path.join(out, "features.csv"))
    tracking.write_transitions_csv(result.transitions, os.path.join(out, "transitions.csv"))
    if getattr(args, "geojson", False):
        tracking.write_features_geojson(rows, os.path.join(out, "features.geojson"))
    report = {
        "vertices": int(mesh.num_vertices),
        "edges": int(mesh.num_edges),
        "layers": int(ss.num_layers),
        "events_per_layer": [int(n) for n in result.events_per_layer],
        "transitions": int(len(result.transitions)),
        "traces": int(len(result.traces)),
        "survivors": sum(1 for r in life.records if r.terminal == "survived"),
        "tracking_seconds": elapsed,
        "peak_rss_kb": int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss),
    }
    _write_json(report, os.path.join(out, "track_report.json"))
    print(
        f"tracking: {sum(result.events_per_layer)} events, "
        f"{len(result.transitions)} transitions in {elapsed:.3f}s"
    )
    return 0


def _evaluate(features_csv, gt_path, out, radius, beta):
    gt = evaluation.load_ground_truth(gt_path)
    maxima = []
    with open(features_csv, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if parts[idx["kind"]] != "maximum" or parts[idx["origin"]] != "initial":
                continue
            maxima.append(
                (
                    int(parts[idx["id"]]),
                    float(parts[idx["x"]]),
                    float(parts[idx["y"]]),
                    float(parts[idx["life_span"]]),
                )
            )
    if not maxima:
        raise DataError(f"{features_csv}: no initial maxima to evaluate")
    curve = evaluation.pr_sweep(maxima, gt, radius=radius, beta=beta)
    evaluation.write_pr_csv(curve, os.path.join(out, "pr_curve.csv"))
    at_best = evaluation.match_maxima(
        [m for m in maxima if m[3] >= curve.best.threshold], gt, radius
    )
    at_zero = evaluation.match_maxima(maxima, gt, radius)
    metrics = {
        "best_f_beta": curve.best.f_beta,
        "best_threshold": curve.best.threshold,
        "precision_at_best": curve.best.precision,
        "recall_at_best": curve.best.recall,
        "dist_avg_at_best": at_best.dist_avg,
        "dist_avg_all": at_zero.dist_avg,
        "maxima": len(maxima),
        "spots": len(gt),
    }
    _write_json(metrics, os.path.join(out, "metrics.json"))
    return metrics


def cmd_evaluate(args, config):
    out = _ensure_outdir(args, config)
    gt_path = getattr(args, "ground_truth", None) or config.get("ground_truth")
    if not gt_path:
        raise DataError("no ground truth given (use --ground-truth)")
    if not os.path.exists(gt_path):
        raise DataError(f"{gt_path}: no such file")
    features = getattr(args, "features", None) or os.path.join(out, "features.csv")
    if not os.path.exists(features):
        raise DataError(f"{features}: no such file")
    metrics = _evaluate(
        features,
        gt_path,
        out,
        _setting(args, config, "radius", 50.0),
        _setting(args, config, "beta", 0.5),
    )
    print(
        f"evaluate: best F_beta {metrics['best_f_beta']:.4f} at threshold "
        f"{metrics['best_threshold']:.4f}, dist_avg {metrics['dist_avg_at_best']:.2f} m"
    )
    return 0


def _run_pipeline(args, config, out):
    cloud, _ = _load_cloud(args, config)
    sampler = (args.sampler or config.get("sampler", "pfps")).split(",")[0]
    cfg = _downsample_cfg(args, config, sampler)
    sampled = pointcloud.downsample(cloud, cfg)
    pointcloud.save_points(sampled, os.path.join(out, f"points_{sampler}.xyz"))
    mesh = tinmod.delaunay_triangulate(sampled)
    alpha = _setting(args, config, "alpha")
    if alpha is not None and math.isfinite(alpha):
        mesh = tinmod.alpha_shape_filter(mesh, tinmod.AlphaShapeConfig(alpha=alpha))
    tinmod.save_tin(mesh, os.path.join(out, "tin.txt"))
    ss = smoothing.build_scale_space(mesh, mesh.vertices[:, 2], _smoothing_cfg(args, config))
    smoothing.save_scale_space(ss, os.path.join(out, "scalespace"))
    result = tracking.track_scale_space(ss)
    life = tracking.recover_life_spans(result)
    rows = tracking.feature_rows(result, life)
    tracking.write_features_csv(rows, os.path.join(out, "features.csv"))
    tracking.write_transitions_csv(result.transitions, os.path.join(out, "transitions.csv"))
    if getattr(args, "geojson", False):
        tracking.write_features_geojson(rows, os.path.join(out, "features.geojson"))
    gt_path = getattr(args, "ground_truth", None) or config.get("ground_truth")
    metrics = None
    if gt_path:
        metrics = _evaluate(
            os.path.join(out, "features.csv"),
            gt_path,
            out,
            _setting(args, config, "radius", 50.0),
            _setting(args, config, "beta", 0.5),
        )
    return mesh, result, metrics


def cmd_pipeline(args, config):
    out = _ensure_outdir(args, config)
    mesh, result, metrics = _run_pipeline(args, config, out)
    msg = (
        f"pipeline: {mesh.num_vertices} vertices, "
        f"{len(result.transitions)} transitions"
    )
    if metrics:
        msg += f", best F_beta {metrics['best_f_beta']:.4f}"
    print(msg)
    return 0


def cmd_sweep(args, config):
    out = _ensure_outdir(args, config)
    res_text = args.resolutions or config.get("resolutions")
    if not res_text:
        raise DataError("no resolutions given (use --resolutions N1,N2,...)")
    try:
        targets = [int(r) for r in str(res_text).split(",") if r.strip()]
    except ValueError:
        raise DataError(f"bad resolutions list: {res_text!r}") from None
    cloud, _ = _load_cloud(args, config)
    rows = []
    failures = []
    for target in targets:
        sub = os.path.join(out, f"res_{target}")
        os.makedirs(sub, exist_ok=True)
        sub_args = argparse.Namespace(**vars(args))
        sub_args.keep_ratio = min(1.0, target / len(cloud))
        sub_args.output_dir = sub
        try:
            _, _, metrics = _run_pipeline(sub_args, config, sub)
            if metrics is None:
                raise DataError("sweep needs --ground-truth for metrics")
            rows.append((target, metrics["best_f_beta"], metrics["dist_avg_at_best"]))
            print(f"resolution {target}: f_beta {metrics['best_f_beta']:.4f}")
        except (DataError, ValueError, OSError) as exc:
            failures.append((target, str(exc)))
            print(f"resolution {target}: failed: {exc}", file=sys.stderr)
    dest = os.path.join(out, "sweep.csv")
    tmp = f"{dest}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("resolution,f_beta,dist_avg\n")
        for target, fb, da in rows:
            fh.write(f"{target},{fb!r},{da!r}\n")
    os.replace(tmp, dest)
    if failures:
        _write_json(
            {"failures": [{"resolution": t, "error": e} for t, e in failures]},
            os.path.join(out, "sweep_failures.json"),
        )
    return 0 if rows else 2


# ------------------------------------------------------------------ parser


def _add_common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--output-dir", dest="output_dir")
    sub.add_argument("--seed", type=int, dest="seed")


def _add_downsample_opts(sub):
    sub.add_argument("--input")
    sub.add_argument("--format", choices=("xyz", "csv"))
    sub.add_argument("--sampler", help="sampler name or comma list (pfps,fps,random,voxel)")
    sub.add_argument("--patch-size", type=float, dest="patch_size")
    sub.add_argument("--keep-ratio", type=float, dest="keep_ratio")
    sub.add_argument(
        "--curvature-mode",
        choices=("surface_variation", "largest_eigenvalue"),
        dest="curvature_mode",
    )


def _add_smooth_opts(sub):
    sub.add_argument("--sigma-small", type=float, dest="sigma_small")
    sub.add_argument("--tau", type=float)
    sub.add_argument("--layers", type=int)
    sub.add_argument(
        "--variance-mode", choices=("calibrated", "nominal"), dest="variance_mode"
    )
    sub.add_argument(
        "--no-virtual-neighbors",
        action="store_false",
        dest="virtual_neighbors",
        default=None,
    )
    sub.add_argument(
        "--no-angle-reweight",
        action="store_false",
        dest="angle_reweight",
        default=None,
    )


def build_parser():
    parser = _Parser(prog="tintrack", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("downsample", help="adaptive point cloud downsampling")
    _add_common(p)
    _add_downsample_opts(p)
    p.set_defaults(func=cmd_downsample)

    p = subs.add_parser("triangulate", help="Delaunay + alpha-shape TIN")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--format", choices=("xyz", "csv"))
    p.add_argument("--alpha", type=float, help="circumradius threshold; inf disables")
    p.set_defaults(func=cmd_triangulate)

    p = subs.add_parser("smooth", help="build and store the scale space")
    _add_common(p)
    p.add_argument("--tin")
    _add_smooth_opts(p)
    p.set_defaults(func=cmd_smooth)

    p = subs.add_parser("track", help="track critical points; write features")
    _add_common(p)
    p.add_argument("--tin")
    p.add_argument("--scale-space", dest="scale_space")
    p.add_argument("--geojson", action="store_true")
    p.set_defaults(func=cmd_track)

    p = subs.add_parser("evaluate", help="score maxima against spot heights")
    _add_common(p)
    p.add_argument("--features")
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--radius", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("pipeline", help="all stages in one run")
    _add_common(p)
    _add_downsample_opts(p)
    p.add_argument("--alpha", type=float)
    _add_smooth_opts(p)
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--radius", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--geojson", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = subs.add_parser("sweep", help="rerun the pipeline at several resolutions")
    _add_common(p)
    _add_downsample_opts(p)
    p.add_argument("--alpha", type=float)
    _add_smooth_opts(p)
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--radius", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--resolutions", help="comma list of target vertex counts")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    if args.config:
        if not os.path.exists(args.config):
            print(f"tintrack: {args.config}: no such config file", file=sys.stderr)
            return 2
        try:
            config = read_config_file(args.config)
        except DataError as exc:
            print(f"tintrack: {exc}", file=sys.stderr)
            return 2
    try:
        return args.func(args, config)
    except DataError as exc:
        print(f"tintrack: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tintrack: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
