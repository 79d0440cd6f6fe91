"""Command-line entry point.

Subcommands: synth, stitch, eval, classify, rddm-check. Exit codes:
0 success, 2 environment/IO trouble, 3 malformed input, 4 incomplete
inputs. PIS3R_LOG controls log verbosity (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diffusion, evaluation, formats, report, synth
from .config import ConfigError, RunConfig, load_config
from .formats import FormatError
from .geometry import GeometryError, PointMap
from .metrics import MetricError
from .parallax import ParallaxError, assess_parallax
from .registration import RegistrationFailure, baseline_stitch
from .stitcher import StitchError, stitch

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_ENVIRONMENT = 2
EXIT_MALFORMED = 3
EXIT_INCOMPLETE = 4

log = logging.getLogger("pis3r")


def _setup_logging() -> None:
    level = os.environ.get("PIS3R_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    # Flags win over the config file.
    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "reference", None) is not None:
        cfg.reference = args.reference
    if getattr(args, "seed", None) is not None:
        cfg.ransac.seed = args.seed
        cfg.diffusion.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "max_dim", None) is not None:
        cfg.max_dim = args.max_dim
    return RunConfig(**{**cfg.__dict__})  # revalidate after overrides


def cmd_synth(args) -> int:
    try:
        width, height = (int(x) for x in args.size.lower().split("x"))
    except ValueError:
        print(f"error: --size must look like 256x192, got {args.size!r}", file=sys.stderr)
        return EXIT_MALFORMED
    mix = [m.strip() for m in args.mix.split(",") if m.strip()]
    bad = [m for m in mix if m not in synth.PARALLAX_MODES]
    if bad:
        print(f"error: unknown parallax modes {bad}; valid: {list(synth.PARALLAX_MODES)}", file=sys.stderr)
        return EXIT_MALFORMED
    try:
        synth.generate_dataset(
            args.out,
            n_scenes=args.scenes,
            per_scene=args.pairs,
            mix=mix,
            seed=args.seed if args.seed is not None else 0,
            width=width,
            height=height,
        )
    except (OSError, PermissionError) as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except synth.SynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(str(Path(args.out) / "manifest.json"))
    return EXIT_OK


def _load_item_inputs(item_dir: Path):
    needed = ["ref.png", "tgt.png", "ref.pmap", "tgt.pmap", "cameras.json"]
    for name in needed:
        if not (item_dir / name).exists():
            raise FormatError(f"{item_dir / name}: missing input file")
    ref_img = formats.load_image(item_dir / "ref.png")
    tgt_img = formats.load_image(item_dir / "tgt.png")
    ref_pmap = PointMap(formats.read_pmap(item_dir / "ref.pmap"))
    tgt_pmap = PointMap(formats.read_pmap(item_dir / "tgt.pmap"))
    cams = formats.load_cameras(item_dir / "cameras.json")
    if len(cams) < 2:
        raise FormatError(f"{item_dir / 'cameras.json'}: need at least 2 view records")
    return (ref_img, tgt_img, ref_pmap, tgt_pmap, cams)


def _write_stitch_outputs(out_dir: Path, result, cfg: RunConfig, refined) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    formats.save_image(out_dir / "stitched.png", refined)
    formats.save_mask(out_dir / "holes.png", result.hole_mask)
    depth = np.where(np.isfinite(result.depth_buffer), result.depth_buffer, np.nan)
    formats.write_pmap(out_dir / "depth.pmap", depth.astype(np.float32))
    meta = {
        "canvas": {
            "width": result.canvas.width,
            "height": result.canvas.height,
            "max_dim": result.canvas.max_dim,
        },
        "offset": list(result.canvas.offset),
        "hole_fraction": result.hole_fraction,
        "dropped_samples": result.dropped_samples,
        "behind_camera_count": result.behind_count,
        "reference_view": result.reference_view,
        "method": cfg.method,
        "config_echo": cfg.to_dict(),
    }
    (out_dir / "stitch_report.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _stitch_one(item_dir: Path, out_dir: Path, cfg: RunConfig, reference: int) -> None:
    ref_img, tgt_img, ref_pmap, tgt_pmap, cams = _load_item_inputs(item_dir)
    if cfg.method == "pis3r":
        result = stitch(
            [(ref_pmap, ref_img), (tgt_pmap, tgt_img)],
            [cams[0].camera, cams[1].camera],
            reference=reference,
            max_dim=cfg.max_dim,
        )
    else:
        images = (ref_img, tgt_img) if reference == 0 else (tgt_img, ref_img)
        result = baseline_stitch(
            images[0],
            images[1],
            threshold=cfg.ransac.threshold,
            max_iters=cfg.ransac.max_iters,
            seed=cfg.ransac.seed,
            max_corners=cfg.registration.max_corners,
            nms_radius=cfg.registration.nms_radius,
            patch=cfg.registration.patch,
            min_ncc=cfg.registration.min_ncc,
            match_ratio=cfg.registration.match_ratio,
            min_inliers=cfg.registration.min_inliers,
            max_refit_error=cfg.registration.max_refit_error,
            max_dim=cfg.max_dim,
        )
        result.reference_view = reference
    refined = diffusion.refine(
        result.image,
        holes=result.hole_mask,
        mode=cfg.diffusion.mode,
        command=cfg.diffusion.command,
    )
    _write_stitch_outputs(out_dir, result, cfg, refined)


def cmd_stitch(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    source = Path(args.target)
    out_root = Path(args.out)
    manifest_path = source / "manifest.json"

    def run_item(item_dir: Path, out_dir: Path) -> None:
        _stitch_one(item_dir, out_dir, cfg, cfg.reference)
        if args.views == "both":
            other = 1 - cfg.reference
            _stitch_one(item_dir, out_dir / "alt", cfg, other)

    try:
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            jobs = [(source / it["dir"], out_root / it["dir"]) for it in manifest["items"]]
            if cfg.jobs > 1:
                with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                    list(pool.map(lambda pair: run_item(*pair), jobs))
            else:
                for pair in jobs:
                    run_item(*pair)
            print(str(out_root))
        else:
            run_item(source, out_root)
            print(str(out_root / "stitch_report.json"))
    except (FormatError, GeometryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (RegistrationFailure, StitchError, diffusion.DiffusionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    try:
        result = evaluation.evaluate_dataset(manifest, manifest_path.parent, args.stitched, cfg)
    except evaluation.EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (FormatError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    try:
        paths = report.write_eval_report(args.out, result)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    agg = result["aggregate"]
    print(json.dumps({"rsr": agg["rsr"], "psnr_mean": agg["psnr_mean"], "ssim_mean": agg["ssim_mean"],
                      "sampson_mean": agg["sampson_mean"], "report": paths["report"]}))
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        cams = formats.load_cameras(args.cameras)
        if len(cams) < 2:
            raise FormatError(f"{args.cameras}: need at least two camera records")
        pmap = PointMap(formats.read_pmap(args.pmap))
        assessment = assess_parallax(
            cams[args.index1].camera, cams[args.index2].camera, pmap,
            tau1=args.tau1, tau2=args.tau2,
        )
    except (FormatError, GeometryError, ParallaxError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    print(json.dumps(assessment.to_dict(), indent=2))
    return EXIT_OK


def _rddm_checks(trials: int, seed: int):
    rng = np.random.default_rng(seed)

    def endpoints():
        for t in range(1, 1001):
            sched = diffusion.make_schedule(t)
            if abs(sched.alpha_bar[-1] - 1) > 1e-12 or abs(sched.beta_bar[-1] - 1) > 1e-12:
                return f"T={t} endpoints off"
        return None

    def step_marginal():
        for t_total in (1, 5, 10, 100):
            sched = diffusion.make_schedule(t_total)
            x0 = rng.uniform(0, 1, size=(6, 6))
            x_res = rng.uniform(-0.5, 0.5, size=(6, 6))
            zero = np.zeros_like(x0)
            x = x0.copy()
            for t in range(1, t_total + 1):
                x = diffusion.forward_step(x, x_res, t, sched, zero)
                ref = diffusion.forward_marginal(x0, x_res, t, sched, zero)
                if np.abs(x - ref).max() > 1e-12:
                    return f"T={t_total}, t={t}: max dev {np.abs(x - ref).max():.2e}"
        return None

    def variance():
        sched = diffusion.make_schedule(10)
        for t in (3, 10):
            xs = np.zeros(trials)
            noises = rng.standard_normal((t, trials))
            for step in range(1, t + 1):
                xs = xs + sched.alpha[step - 1] * 0.0 + sched.beta[step - 1] * noises[step - 1]
            var = xs.var(ddof=1)
            target = sched.beta_bar_at(t) ** 2
            se = target * np.sqrt(2.0 / (trials - 1))
            if abs(var - target) > 3 * se:
                return f"t={t}: var {var:.5f} vs {target:.5f} (3se={3 * se:.5f})"
        return None

    def oracle_sampler():
        sched = diffusion.make_schedule(10)
        for i in range(10):
            x0 = rng.uniform(0, 1, size=(8, 8, 3))
            x_in = np.clip(x0 + rng.uniform(-0.3, 0.3, size=x0.shape), 0, 1)
            hook = diffusion.oracle_hook(x0, sched)
            for steps in (5, 10):
                out = diffusion.sample(x_in, sched, hook, steps=steps, seed=int(rng.integers(1 << 31)))
                if np.abs(out - x0).max() > 1e-5:
                    return f"image {i}, steps={steps}: err {np.abs(out - x0).max():.2e}"
        return None

    def loss_zero():
        res = rng.standard_normal((4, 4))
        eps = rng.standard_normal((4, 4))
        l_res, l_eps = diffusion.losses(res, eps, res, eps)
        if l_res != 0.0 or l_eps != 0.0:
            return f"nonzero at truth: {l_res}, {l_eps}"
        return None

    return [
        ("schedule-endpoints", endpoints),
        ("step-marginal-consistency", step_marginal),
        ("marginal-variance", variance),
        ("oracle-sampler-recovery", oracle_sampler),
        ("losses-zero-at-truth", loss_zero),
    ]


def cmd_rddm_check(args) -> int:
    failures = 0
    for name, check in _rddm_checks(args.trials, args.seed if args.seed is not None else 0):
        detail = check()
        if detail is None:
            print(f"PASS {name}")
        else:
            print(f"FAIL {name}: {detail}")
            failures += 1
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pis3r", description="Reprojection stitching engine and evaluation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="Run-config JSON file; flags override it")
        p.add_argument("--jobs", type=int, default=None, help="Concurrent items for dataset commands")
        p.add_argument("--seed", type=int, default=None, help="Seed for all stochastic stages")

    p = sub.add_parser("synth", help="Generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=2)
    p.add_argument("--pairs", type=int, default=2)
    p.add_argument("--mix", default="very-large", help="Comma list of parallax modes, cycled per item")
    p.add_argument("--size", default="256x192", help="View size WxH")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stitch", help="Stitch one item dir or a whole dataset")
    common(p)
    p.add_argument("target", help="Item directory, or dataset root containing manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["pis3r", "homography-baseline"], default=None)
    p.add_argument("--reference", type=int, default=None)
    p.add_argument("--max-dim", dest="max_dim", type=int, default=None)
    p.add_argument("--views", choices=["ref", "both"], default="ref",
                   help="'both' also writes the swapped-reference outputs to alt/")
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("eval", help="Run the evaluation protocol over stitched outputs")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stitched", required=True, help="Root of stitched outputs mirroring the dataset layout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="Assess the parallax level of a camera pair")
    common(p)
    p.add_argument("--cameras", required=True)
    p.add_argument("--pmap", required=True)
    p.add_argument("--index1", type=int, default=0)
    p.add_argument("--index2", type=int, default=1)
    p.add_argument("--tau1", type=float, default=0.02)
    p.add_argument("--tau2", type=float, default=0.25)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("rddm-check", help="Run the diffusion invariant suite")
    common(p)
    p.add_argument("--trials", type=int, default=10000)
    p.set_defaults(func=cmd_rddm_check)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
