"""CLI surface: subcommands, exit codes, file outputs."""

from __future__ import annotations

import hashlib
import json
import os
import stat
from pathlib import Path

import numpy as np
import pytest

from pis3r import formats
from pis3r.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    code = main([
        "synth", "--out", str(out), "--scenes", "2", "--pairs", "2",
        "--mix", "slight,very-large", "--seed", "5", "--size", "96x72",
    ])
    assert code == 0
    return out


class TestSynth:
    def test_creates_items_and_manifest(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert len(manifest["items"]) == 4
        for item in manifest["items"]:
            assert (dataset / item["dir"] / "ref.pmap").exists()

    def test_deterministic_manifest(self, tmp_path):
        hashes = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["synth", "--out", str(out), "--scenes", "1", "--pairs", "1",
                         "--mix", "very-large", "--seed", "9", "--size", "64x48"]) == 0
            hashes.append(hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

    def test_unwritable_dir_exits_2(self, tmp_path):
        # A regular file where a directory is needed fails for any user.
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        code = main(["synth", "--out", str(blocker / "ds"), "--scenes", "1",
                     "--pairs", "1", "--size", "64x48"])
        assert code == 2

    def test_bad_mode_exits_3(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x"), "--mix", "gigantic"]) == 3


class TestStitch:
    def test_single_item_outputs(self, dataset, tmp_path):
        manifest = json.loads((dataset / "manifest.json").read_text())
        item_dir = dataset / manifest["items"][0]["dir"]
        out = tmp_path / "stitched"
        assert main(["stitch", str(item_dir), "--out", str(out)]) == 0
        for name in ("stitched.png", "holes.png", "depth.pmap", "stitch_report.json"):
            assert (out / name).exists(), name
        report = json.loads((out / "stitch_report.json").read_text())
        assert 0.0 <= report["hole_fraction"] < 1.0
        assert report["canvas"]["width"] >= 96
        assert report["method"] == "pis3r"
        assert report["config_echo"]["ransac"]["seed"] == 0

    def test_dataset_mode_with_both_views(self, dataset, tmp_path):
        out = tmp_path / "stitched_all"
        assert main(["stitch", str(dataset), "--out", str(out), "--views", "both"]) == 0
        manifest = json.loads((dataset / "manifest.json").read_text())
        for item in manifest["items"]:
            assert (out / item["dir"] / "stitched.png").exists()
            assert (out / item["dir"] / "alt" / "stitched.png").exists()

    def test_missing_pmap_exits_3(self, dataset, tmp_path):
        manifest = json.loads((dataset / "manifest.json").read_text())
        src = dataset / manifest["items"][0]["dir"]
        broken = tmp_path / "broken_item"
        broken.mkdir()
        for name in ("ref.png", "tgt.png", "tgt.pmap", "cameras.json"):
            (broken / name).write_bytes((src / name).read_bytes())
        code = main(["stitch", str(broken), "--out", str(tmp_path / "o")])
        assert code == 3

    def test_homography_baseline_method(self, dataset, tmp_path):
        manifest = json.loads((dataset / "manifest.json").read_text())
        slight = next(i for i in manifest["items"] if i["mode"] == "slight")
        out = tmp_path / "base_out"
        # Small test frames need denser corners than the defaults assume.
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"registration": {"nms_radius": 3, "min_inliers": 6}}))
        code = main(["stitch", str(dataset / slight["dir"]), "--out", str(out),
                     "--method", "homography-baseline", "--config", str(cfg_path)])
        assert code == 0
        report = json.loads((out / "stitch_report.json").read_text())
        assert report["method"] == "homography-baseline"
        assert report["config_echo"]["registration"]["min_inliers"] == 6


class TestEval:
    def test_full_protocol(self, dataset, tmp_path):
        stitched = tmp_path / "stitched"
        assert main(["stitch", str(dataset), "--out", str(stitched), "--views", "both"]) == 0
        out = tmp_path / "evalout"
        code = main(["eval", "--manifest", str(dataset / "manifest.json"),
                     "--stitched", str(stitched), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "eval_report.json").read_text())
        assert report["aggregate"]["rsr"] == 100.0
        assert report["aggregate"]["lpips"] == "n/a"
        assert (out / "pairs.csv").exists()
        assert (out / "fig_metrics.png").exists()
        assert (out / "fig_sampson.png").exists()
        header = (out / "pairs.csv").read_text().splitlines()[0]
        assert header.startswith("item,mode,registration_ok,psnr,ssim")

    def test_missing_outputs_exit_4(self, dataset, tmp_path):
        code = main(["eval", "--manifest", str(dataset / "manifest.json"),
                     "--stitched", str(tmp_path / "void"), "--out", str(tmp_path / "e")])
        assert code == 4


class TestClassify:
    def test_modes(self, tmp_path):
        for mode, expect in (("pure-rotation", "pure-rotation"), ("very-large", "very-large")):
            ds = tmp_path / f"ds_{mode}"
            assert main(["synth", "--out", str(ds), "--scenes", "1", "--pairs", "1",
                         "--mix", mode, "--seed", "3", "--size", "64x48"]) == 0
            item = json.loads((ds / "manifest.json").read_text())["items"][0]
            code = main(["classify", "--cameras", str(ds / item["files"]["cameras"]),
                         "--pmap", str(ds / item["files"]["ref_pmap"])])
            assert code == 0

    def test_classify_output_json(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        main(["synth", "--out", str(ds), "--scenes", "1", "--pairs", "1",
              "--mix", "very-large", "--seed", "3", "--size", "64x48"])
        item = json.loads((ds / "manifest.json").read_text())["items"][0]
        capsys.readouterr()
        assert main(["classify", "--cameras", str(ds / item["files"]["cameras"]),
                     "--pmap", str(ds / item["files"]["ref_pmap"])]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["class"] == "very-large"
        assert out["p_level"] >= 0.25

    def test_truncated_pmap_exits_3(self, tmp_path):
        ds = tmp_path / "ds"
        main(["synth", "--out", str(ds), "--scenes", "1", "--pairs", "1",
              "--mix", "slight", "--seed", "3", "--size", "64x48"])
        item = json.loads((ds / "manifest.json").read_text())["items"][0]
        pmap = ds / item["files"]["ref_pmap"]
        pmap.write_bytes(pmap.read_bytes()[:40])
        code = main(["classify", "--cameras", str(ds / item["files"]["cameras"]),
                     "--pmap", str(pmap)])
        assert code == 3


def test_rddm_check_passes(capsys):
    assert main(["rddm-check", "--trials", "4000"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    assert "FAIL" not in out
