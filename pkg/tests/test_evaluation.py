"""Dataset-level evaluation: aggregation, planted failures, epipolar pair scoring."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from pis3r import formats
from pis3r.config import RunConfig
from pis3r.evaluation import (
    EvaluationError,
    aggregate_outcomes,
    evaluate_dataset,
    offset_camera,
    sampson_between_stitched,
)
from pis3r.geometry import PointMap
from pis3r.stitcher import stitch
from pis3r.synth import generate_dataset, generate_pair, make_camera, make_cluttered_scene, make_scene


def stitch_dataset(dataset_root: Path, stitched_root: Path, manifest, both_views=False):
    cfg = RunConfig()
    for item in manifest["items"]:
        item_dir = dataset_root / item["dir"]
        out_dir = stitched_root / item["dir"]
        out_dir.mkdir(parents=True, exist_ok=True)
        ref_img = formats.load_image(item_dir / "ref.png")
        tgt_img = formats.load_image(item_dir / "tgt.png")
        ref_pmap = PointMap(formats.read_pmap(item_dir / "ref.pmap"))
        tgt_pmap = PointMap(formats.read_pmap(item_dir / "tgt.pmap"))
        cams = formats.load_cameras(item_dir / "cameras.json")
        views = [(ref_pmap, ref_img), (tgt_pmap, tgt_img)]
        models = [cams[0].camera, cams[1].camera]
        for ref_idx, sub in ((0, out_dir), (1, out_dir / "alt")) if both_views else ((0, out_dir),):
            result = stitch(views, models, reference=ref_idx)
            sub.mkdir(parents=True, exist_ok=True)
            formats.save_image(sub / "stitched.png", result.image)
            formats.save_mask(sub / "holes.png", result.hole_mask)
            (sub / "stitch_report.json").write_text(
                json.dumps(
                    {
                        "offset": list(result.canvas.offset),
                        "reference_view": ref_idx,
                        "hole_fraction": result.hole_fraction,
                    }
                )
            )
    return stitched_root


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(
        root, n_scenes=2, per_scene=2, mix=["slight", "very-large"], seed=12,
        width=96, height=72,
    )
    stitched = tmp_path_factory.mktemp("stitched")
    stitch_dataset(root, stitched, manifest, both_views=True)
    return root, stitched, manifest


class TestEvaluateDataset:
    def test_happy_path(self, small_dataset):
        root, stitched, manifest = small_dataset
        report = evaluate_dataset(manifest, root, stitched, RunConfig())
        agg = report["aggregate"]
        assert agg["total_pairs"] == 4
        assert agg["rsr"] == 100.0
        assert agg["psnr_mean"] is not None and agg["psnr_mean"] > 20.0
        assert agg["wo_failed"]["pairs"] == 4
        assert agg["lpips"] == "n/a"
        assert all(row["registration_ok"] for row in report["pairs"])
        assert report["config_echo"]["method"] == "pis3r"

    def test_sampson_present_for_both_view_outputs(self, small_dataset):
        root, stitched, manifest = small_dataset
        report = evaluate_dataset(manifest, root, stitched, RunConfig())
        means = [row["sampson_mean"] for row in report["pairs"]]
        assert any(m is not None for m in means)
        assert all(m < 1.5 for m in means if m is not None)

    def test_planted_failures_drive_rsr(self, small_dataset, tmp_path, rng):
        root, _, manifest = small_dataset
        stitched = tmp_path / "stitched_bad"
        stitch_dataset(root, stitched, manifest)
        # Corrupt one of four stitched outputs with noise.
        victim = stitched / manifest["items"][2]["dir"] / "stitched.png"
        shape = formats.load_image(victim).shape
        formats.save_image(victim, rng.integers(0, 256, size=shape, dtype=np.uint8))
        report = evaluate_dataset(manifest, root, stitched, RunConfig())
        agg = report["aggregate"]
        assert agg["failed_pairs"] == 1
        assert agg["rsr"] == 75.0  # (1 - 1/4) * 100
        assert agg["wo_failed"]["pairs"] == 3
        failed_rows = [r for r in report["pairs"] if not r["registration_ok"]]
        assert len(failed_rows) == 1
        assert failed_rows[0]["item"] == "scene01/item00"
        assert failed_rows[0]["psnr"] is None
        # The all-pairs mean still covers all four items via fallback scores.
        assert failed_rows[0]["fallback_psnr"] is not None

    def test_missing_outputs_listed(self, small_dataset, tmp_path):
        root, _, manifest = small_dataset
        empty = tmp_path / "nothing"
        with pytest.raises(EvaluationError, match="stitched.png"):
            evaluate_dataset(manifest, root, empty, RunConfig())

    def test_empty_manifest_rejected(self, small_dataset):
        root, stitched, _ = small_dataset
        with pytest.raises(EvaluationError):
            evaluate_dataset({"items": []}, root, stitched, RunConfig())

    def test_parallel_evaluation_identical(self, small_dataset):
        root, stitched, manifest = small_dataset
        serial = evaluate_dataset(manifest, root, stitched, RunConfig())
        cfg = RunConfig(jobs=3)
        parallel = evaluate_dataset(manifest, root, stitched, cfg)
        assert parallel["pairs"] == serial["pairs"]
        agg_s = {k: v for k, v in serial["aggregate"].items()}
        agg_p = {k: v for k, v in parallel["aggregate"].items()}
        assert agg_p == agg_s


class TestSampsonBetweenStitched:
    def test_reprojection_pair_scores_low(self):
        item = generate_pair(
            make_cluttered_scene(41), make_camera(192, 144), "very-large",
            seed=3, very_large_ratio=(0.26, 0.32),
        )
        views = [
            (item.reference.pointmap, item.reference.image),
            (item.target.pointmap, item.target.image),
        ]
        cams = [item.reference.camera, item.target.camera]
        r0 = stitch(views, cams, reference=0)
        r1 = stitch(views, cams, reference=1)
        cfg = RunConfig()
        cfg.registration.nms_radius = 4
        cfg.registration.max_corners = 2000
        result, count = sampson_between_stitched(
            r0.image, r0.hole_mask, r0.canvas.offset, cams[0],
            r1.image, r1.hole_mask, r1.canvas.offset, cams[1],
            cfg,
        )
        assert result is not None and count >= 8
        assert result.mean < 1.0

    def test_offset_camera_shifts_principal_point(self):
        cam = make_camera(64, 48)
        shifted = offset_camera(cam, (10, 4), 100, 80)
        assert shifted.intrinsics.cx == cam.intrinsics.cx + 10
        assert shifted.intrinsics.cy == cam.intrinsics.cy + 4
        assert (shifted.width, shifted.height) == (100, 80)


def test_aggregate_means_match_hand_computation():
    from pis3r.metrics import MetricReport
    from pis3r.evaluation import PairOutcome

    outcomes = [
        PairOutcome("a", "slight", MetricReport(40.0, 0.9, 10, True), 20.0, 0.5),
        PairOutcome("b", "slight", MetricReport(None, None, 0, False), 8.0, 0.1),
        PairOutcome("c", "slight", MetricReport(30.0, 0.8, 10, True), 15.0, 0.4),
    ]
    agg = aggregate_outcomes(outcomes)
    assert agg["rsr"] == round((1 - 1 / 3) * 100, 1)
    assert abs(agg["psnr_mean"] - (40.0 + 8.0 + 30.0) / 3) < 1e-12
    assert abs(agg["wo_failed"]["psnr_mean"] - 35.0) < 1e-12
    assert agg["wo_failed"]["pairs"] == 2
