import json
import os

import numpy as np
import pytest

from support import gaussian_bump, jittered_grid
from tintrack.cli import main, read_config_file
from tintrack.errors import DataError
from tintrack.pointcloud import save_points


def two_bump_cloud(n=26, spacing=2.0, seed=21):
    xy = jittered_grid(n, n, spacing=spacing, jitter=0.3, seed=seed)
    mid = (n - 1) * spacing / 2.0
    z = (
        gaussian_bump(xy, (mid, mid), 20.0, (n * spacing) ** 2 / 3.0)
        + gaussian_bump(xy, (mid - 11, mid), 10.0, 16.0)
        + gaussian_bump(xy, (mid + 11, mid), 3.0, 16.0)
    )
    return np.column_stack([xy, z]), (mid - 11, mid), (mid + 11, mid)


@pytest.fixture()
def cloud_file(tmp_path):
    pts, tall, small = two_bump_cloud()
    path = tmp_path / "cloud.xyz"
    save_points(pts, str(path))
    return str(path), tall, small


@pytest.fixture()
def gt_file(tmp_path, cloud_file):
    _, tall, small = cloud_file
    path = tmp_path / "gt.csv"
    path.write_text(
        "x,y,name,is_named_peak\n"
        f"{tall[0]},{tall[1]},Tall,true\n"
        f"{small[0]},{small[1]},Small,false\n"
    )
    return str(path)


class TestDownsample:
    def test_single_sampler(self, tmp_path, cloud_file):
        out = tmp_path / "out"
        rc = main(
            [
                "downsample",
                "--input", cloud_file[0],
                "--output-dir", str(out),
                "--sampler", "pfps",
                "--patch-size", "10",
                "--keep-ratio", "0.5",
            ]
        )
        assert rc == 0
        assert (out / "points_pfps.xyz").exists()
        report = json.loads((out / "downsample_report.json").read_text())
        assert report["outputs"]["pfps"]["count"] > 0

    def test_sampler_comparison(self, tmp_path, cloud_file):
        out = tmp_path / "out"
        rc = main(
            [
                "downsample",
                "--input", cloud_file[0],
                "--output-dir", str(out),
                "--sampler", "random,voxel,fps,pfps",
                "--patch-size", "10",
                "--keep-ratio", "0.3",
            ]
        )
        assert rc == 0
        report = json.loads((out / "downsample_report.json").read_text())
        assert set(report["outputs"]) == {"random", "voxel", "fps", "pfps"}
        for name in ("random", "voxel", "fps", "pfps"):
            assert (out / f"points_{name}.xyz").exists()

    def test_rerun_same_output_dir_idempotent(self, tmp_path, cloud_file):
        out = tmp_path / "out"
        args = [
            "downsample",
            "--input", cloud_file[0],
            "--output-dir", str(out),
            "--sampler", "pfps",
            "--patch-size", "10",
            "--keep-ratio", "0.5",
        ]
        assert main(args) == 0
        first = (out / "points_pfps.xyz").read_bytes()
        assert main(args) == 0
        assert (out / "points_pfps.xyz").read_bytes() == first

    def test_missing_input_exits_2(self, tmp_path, capsys):
        rc = main(
            ["downsample", "--input", str(tmp_path / "nope.xyz"), "--output-dir", str(tmp_path)]
        )
        assert rc == 2
        assert "no such file" in capsys.readouterr().err

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as e:
            main(["downsample", "--keep-ratio", "abc", "--output-dir", "x"])
        assert e.value.code == 1

    def test_unknown_command_exits_1(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 1


class TestTriangulate:
    def test_alpha_inf_keeps_delaunay(self, tmp_path, cloud_file):
        out = tmp_path / "out"
        rc = main(
            ["triangulate", "--input", cloud_file[0], "--output-dir", str(out), "--alpha", "inf"]
        )
        assert rc == 0
        report = json.loads((out / "tin_report.json").read_text())
        assert report["triangles_removed_by_alpha"] == 0
        assert report["components"] == 1

    def test_three_points(self, tmp_path):
        path = tmp_path / "tri.xyz"
        path.write_text("0 0 1\n10 0 2\n0 10 3\n")
        out = tmp_path / "out"
        rc = main(["triangulate", "--input", str(path), "--output-dir", str(out)])
        assert rc == 0
        lines = (out / "tin.txt").read_text().splitlines()
        assert lines[0] == "3 1"

    def test_concave_gap_trimmed(self, tmp_path):
        # A C-shaped cloud: Delaunay bridges the bay with long triangles that
        # an alpha filter must remove.
        rng = np.random.default_rng(5)
        pts = []
        for _ in range(1500):
            x, y = rng.uniform(0, 40), rng.uniform(0, 40)
            if 10 < y < 30 and x > 10:
                continue  # the bay
            pts.append((x, y, rng.uniform(0, 1)))
        path = tmp_path / "bay.xyz"
        save_points(np.array(pts), str(path))
        out = tmp_path / "out"
        rc = main(
            ["triangulate", "--input", str(path), "--output-dir", str(out), "--alpha", "3.0"]
        )
        assert rc == 0
        report = json.loads((out / "tin_report.json").read_text())
        assert report["triangles_removed_by_alpha"] > 0

    def test_degenerate_input(self, tmp_path, capsys):
        path = tmp_path / "line.xyz"
        path.write_text("0 0 0\n1 1 0\n2 2 0\n")
        rc = main(["triangulate", "--input", str(path), "--output-dir", str(tmp_path / "o")])
        assert rc == 2


class TestSmoothTrackEvaluate:
    @pytest.fixture()
    def tin_file(self, tmp_path, cloud_file):
        out = tmp_path / "stage"
        main(["triangulate", "--input", cloud_file[0], "--output-dir", str(out)])
        return str(out / "tin.txt")

    def test_smooth_writes_layers(self, tmp_path, tin_file):
        out = tmp_path / "sm"
        rc = main(["smooth", "--tin", tin_file, "--output-dir", str(out), "--layers", "3"])
        assert rc == 0
        manifest = json.loads((out / "scalespace" / "manifest.json").read_text())
        assert manifest["num_layers"] == 3
        assert len(manifest["layer_files"]) == 4
        for name in manifest["layer_files"]:
            assert (out / "scalespace" / name).exists()

    def test_smooth_rerun_byte_identical(self, tmp_path, tin_file):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["smooth", "--tin", tin_file, "--output-dir", str(out), "--layers", "2"]) == 0
        for name in json.loads((out_a / "scalespace" / "manifest.json").read_text())["layer_files"]:
            assert (out_a / "scalespace" / name).read_bytes() == (
                out_b / "scalespace" / name
            ).read_bytes()

    def test_constant_terrain_layers_identical(self, tmp_path):
        xy = jittered_grid(12, 12, jitter=0.25, seed=3)
        path = tmp_path / "flat.xyz"
        save_points(np.column_stack([xy, np.full(len(xy), 5.0)]), str(path))
        out = tmp_path / "out"
        main(["triangulate", "--input", str(path), "--output-dir", str(out)])
        main(["smooth", "--tin", str(out / "tin.txt"), "--output-dir", str(out), "--layers", "2"])
        manifest = json.loads((out / "scalespace" / "manifest.json").read_text())
        blobs = {(out / "scalespace" / n).read_bytes() for n in manifest["layer_files"]}
        assert len(blobs) == 1

    def test_track_and_evaluate(self, tmp_path, tin_file, gt_file):
        out = tmp_path / "run"
        main(["smooth", "--tin", tin_file, "--output-dir", str(out), "--layers", "5"])
        rc = main(
            [
                "track",
                "--tin", tin_file,
                "--scale-space", str(out / "scalespace"),
                "--output-dir", str(out),
                "--geojson",
            ]
        )
        assert rc == 0
        report = json.loads((out / "track_report.json").read_text())
        assert report["transitions"] >= 1
        assert report["peak_rss_kb"] > 0
        features = (out / "features.csv").read_text().splitlines()
        assert features[0].startswith("id,x,y,z,kind")
        geo = json.loads((out / "features.geojson").read_text())
        assert geo["type"] == "FeatureCollection"
        # A maximum collapses with a saddle somewhere in the transitions.
        transitions = (out / "transitions.csv").read_text().splitlines()[1:]
        assert any("collapse" in line and "maximum" in line for line in transitions)

        rc = main(
            [
                "evaluate",
                "--features", str(out / "features.csv"),
                "--ground-truth", gt_file,
                "--output-dir", str(out),
            ]
        )
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["best_f_beta"] == pytest.approx(1.0)
        assert (out / "pr_curve.csv").exists()

    def test_track_missing_scale_space(self, tmp_path, tin_file, capsys):
        rc = main(
            ["track", "--tin", tin_file, "--output-dir", str(tmp_path / "t"),
             "--scale-space", str(tmp_path / "missing")]
        )
        assert rc == 2


class TestPipeline:
    def test_end_to_end_determinism(self, tmp_path, cloud_file, gt_file):
        args = lambda out: [
            "pipeline",
            "--input", cloud_file[0],
            "--output-dir", out,
            "--sampler", "pfps",
            "--patch-size", "10",
            "--keep-ratio", "0.7",
            "--layers", "4",
            "--seed", "11",
            "--ground-truth", gt_file,
        ]
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(args(out_a)) == 0
        assert main(args(out_b)) == 0
        for name in ("features.csv", "transitions.csv", "pr_curve.csv"):
            assert (
                open(os.path.join(out_a, name), "rb").read()
                == open(os.path.join(out_b, name), "rb").read()
            ), name

    def test_constant_terrain_no_transitions(self, tmp_path):
        xy = jittered_grid(14, 14, jitter=0.2, seed=9)
        path = tmp_path / "flat.xyz"
        save_points(np.column_stack([xy, np.full(len(xy), 7.0)]), str(path))
        out = tmp_path / "out"
        rc = main(
            [
                "pipeline",
                "--input", str(path),
                "--output-dir", str(out),
                "--keep-ratio", "1.0",
                "--layers", "2",
            ]
        )
        assert rc == 0
        lines = (out / "transitions.csv").read_text().splitlines()
        assert lines[1:] == []

    def test_monotone_ramp_only_boundary_artifacts(self, tmp_path):
        # Smoothing bends a tilted plane near the boundary, which may create
        # short-lived newborn pairs, but the ramp itself has no initial
        # critical points to lose.
        xy = jittered_grid(14, 14, jitter=0.2, seed=9)
        z = 3.0 * xy[:, 0] + 0.25 * xy[:, 1]
        path = tmp_path / "ramp.xyz"
        save_points(np.column_stack([xy, z]), str(path))
        out = tmp_path / "out"
        rc = main(
            [
                "pipeline",
                "--input", str(path),
                "--output-dir", str(out),
                "--keep-ratio", "1.0",
                "--layers", "2",
            ]
        )
        assert rc == 0
        rows = (out / "features.csv").read_text().splitlines()[1:]
        initial = [r for r in rows if ",initial," in r]
        # The ramp's only initial critical point is the top-corner maximum,
        # and being the global maximum it survives.
        assert len(initial) == 1
        cells = initial[0].split(",")
        assert cells[4] == "maximum"
        assert cells[7] == ""  # no death timestamp

    def test_event_count_scales_with_edges(self, tmp_path):
        reports = {}
        for label, n in (("small", 16), ("large", 32)):
            xy = jittered_grid(n, n, jitter=0.3, seed=13)
            rng = np.random.default_rng(1)
            z = rng.uniform(0, 8, len(xy))
            path = tmp_path / f"{label}.xyz"
            save_points(np.column_stack([xy, z]), str(path))
            out = tmp_path / label
            main(["triangulate", "--input", str(path), "--output-dir", str(out)])
            main(["smooth", "--tin", str(out / "tin.txt"), "--output-dir", str(out), "--layers", "2"])
            main(["track", "--tin", str(out / "tin.txt"), "--scale-space",
                  str(out / "scalespace"), "--output-dir", str(out)])
            reports[label] = json.loads((out / "track_report.json").read_text())
        ratio_edges = reports["large"]["edges"] / reports["small"]["edges"]
        ratio_events = sum(reports["large"]["events_per_layer"]) / max(
            1, sum(reports["small"]["events_per_layer"])
        )
        assert 0.4 * ratio_edges <= ratio_events <= 2.5 * ratio_edges


class TestSweep:
    def test_resolution_sweep_degrades_gracefully(self, tmp_path, cloud_file, gt_file):
        out = tmp_path / "sweep"
        rc = main(
            [
                "sweep",
                "--input", cloud_file[0],
                "--output-dir", str(out),
                "--resolutions", "12,250,500",
                "--patch-size", "25",
                "--layers", "3",
                "--ground-truth", gt_file,
            ]
        )
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "resolution,f_beta,dist_avg"
        assert len(lines) == 4
        rows = {int(l.split(",")[0]): float(l.split(",")[1]) for l in lines[1:]}
        assert sorted(rows) == [12, 250, 500]
        # Both bumps resolved at the higher resolutions; the 3 m bump is lost
        # once the sampling is too sparse to carry it.
        assert rows[250] == pytest.approx(1.0)
        assert rows[500] == pytest.approx(1.0)
        assert rows[12] < 1.0

    def test_failed_row_continues(self, tmp_path, cloud_file, gt_file):
        out = tmp_path / "sweep"
        # Resolution 0 is an invalid keep ratio; the 300-point row must
        # still land and the failure must be recorded.
        rc = main(
            [
                "sweep",
                "--input", cloud_file[0],
                "--output-dir", str(out),
                "--resolutions", "0,300",
                "--patch-size", "10",
                "--layers", "2",
                "--ground-truth", gt_file,
            ]
        )
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("300,")
        failures = json.loads((out / "sweep_failures.json").read_text())
        assert failures["failures"][0]["resolution"] == 0


class TestConfig:
    def test_config_file_and_override(self, tmp_path, cloud_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# pipeline settings\n"
            "patch_size = 10\n"
            "keep_ratio = 0.4\n"
            "sampler = random\n"
            "seed = 5\n"
        )
        vals = read_config_file(str(cfg))
        assert vals == {"patch_size": 10.0, "keep_ratio": 0.4, "sampler": "random", "seed": 5}
        out = tmp_path / "out"
        rc = main(
            [
                "downsample",
                "--config", str(cfg),
                "--input", cloud_file[0],
                "--output-dir", str(out),
                "--sampler", "voxel",  # flag beats config
            ]
        )
        assert rc == 0
        report = json.loads((out / "downsample_report.json").read_text())
        assert list(report["outputs"]) == ["voxel"]

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 1\n")
        with pytest.raises(DataError):
            read_config_file(str(cfg))

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("patch_size ten\n")
        rc = main(["downsample", "--config", str(cfg), "--output-dir", str(tmp_path)])
        assert rc == 2
