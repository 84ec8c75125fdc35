"""Command-line surface.

    asgsr synth          write a synthetic scene (JSON + PLY + reference PNGs)
    asgsr train          run the progressive schedule from a config file
    asgsr render         render one camera at an arbitrary scale factor
    asgsr eval           PSNR/SSIM table per scale, CSV + JSON + plot
    asgsr analyze-filter approximation-error curve, CSV + plot
    asgsr bench          rasterizer timings per resolution, JSON + plot

Every command echoes its effective configuration into the output directory,
so any artifact can be regenerated from that directory alone. Exit codes:
0 success, 2 bad configuration or arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import statistics
import sys
import time

import numpy as np

from .config import RunConfig, echo_config, load_config
from .errors import AsgsrError, ConfigError
from .filters import FilterConfig, approx_error_curve, write_error_curve_csv
from .losses import psnr_capped, ssim
from .prior import ExternalProvider, LinearMockProvider, NullProvider
from .rasterizer import RenderRequest, render_forward
from .scene.gaussians import Gaussians
from .scene.sceneio import load_scene, save_scene, write_png
from .synth import PRESETS, SynthSpec, bench_scene, make_scene
from .trainer import load_checkpoint, train
from .trainer.train import ground_truth_render

DEFAULT_BENCH_RESOLUTIONS = "640x360,1280x720,1920x1080"


def _echo_args(args: argparse.Namespace, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(out_dir, "args.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_csv(path: str, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _scene_path(arg: str) -> str:
    return os.path.join(arg, "scene.json") if os.path.isdir(arg) else arg


def _parse_scales(text: str) -> list[float]:
    try:
        scales = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad scale list {text!r}: {exc}") from exc
    if not scales or any(s < 1.0 for s in scales):
        raise ConfigError(f"scales must be >= 1, got {text!r}")
    return scales


def _parse_resolutions(text: str) -> list[tuple[int, int]]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            w, h = tok.lower().split("x")
            out.append((int(w), int(h)))
        except ValueError as exc:
            raise ConfigError(f"bad resolution {tok!r}, expected WIDTHxHEIGHT") from exc
    if not out:
        raise ConfigError(f"no resolutions in {text!r}")
    return out


def _filters_from_flags(args: argparse.Namespace) -> FilterConfig:
    cfg = FilterConfig.vanilla() if getattr(args, "vanilla", False) else FilterConfig()
    if getattr(args, "no_scale_aware_3d", False):
        cfg = dataclasses.replace(cfg, scale_aware_3d=False)
    if getattr(args, "no_scale_aware_2d", False):
        cfg = dataclasses.replace(cfg, scale_aware_2d=False)
    return cfg


def _load_gaussians(args: argparse.Namespace):
    scene = load_scene(_scene_path(args.scene))
    gaussians = scene.gaussians
    if getattr(args, "checkpoint", None):
        state = load_checkpoint(args.checkpoint)
        gaussians = state.gaussians
        if state.max_rates is not None:
            gaussians.max_rates = state.max_rates
    return scene, gaussians


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        preset=args.preset,
        seed=args.seed,
        n_gaussians=args.n_gaussians,
        cells=args.cells,
        n_cameras=args.cameras,
        base_resolution=tuple(_parse_resolutions(args.resolution)[0]),
        init_scale_shrink=args.shrink,
        init_position_jitter=args.jitter,
    )
    scene = make_scene(spec)
    path = save_scene(scene, args.out)
    _echo_args(args, args.out)
    print(f"wrote {path} ({len(scene.gaussians)} splats, {len(scene.cameras)} cameras)")
    return 0


def _make_provider(config: RunConfig, args: argparse.Namespace):
    if getattr(args, "no_prior", False):
        return None
    if getattr(args, "mock_prior", False):
        return LinearMockProvider()
    if config.provider_command:
        return ExternalProvider(config.provider_command)
    return None


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.provider_cmd is not None:
        overrides["provider_command"] = args.provider_cmd
    filters = config.filters
    if args.no_scale_aware_3d:
        filters = dataclasses.replace(filters, scale_aware_3d=False)
    if args.no_scale_aware_2d:
        filters = dataclasses.replace(filters, scale_aware_2d=False)
    config = dataclasses.replace(config, filters=filters, **overrides)

    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    _echo_args(args, out_dir)
    echo_config(config, out_dir)
    scene = load_scene(_scene_path(args.scene))
    tconfig = config.train_config()
    ckpt = os.path.join(out_dir, "checkpoint.ckpt")
    renders_dir = os.path.join(out_dir, "renders")
    os.makedirs(renders_dir, exist_ok=True)

    provider = _make_provider(config, args)
    sched = tconfig.schedule
    # stop at each stage boundary to dump sample renders; resume is
    # bit-identical so the final model matches an uninterrupted run
    boundaries = [("warmup", tconfig.warmup_iterations)]
    acc = tconfig.warmup_iterations
    for i, (_, n) in enumerate(sched.stages):
        acc += n
        boundaries.append((f"stage{i + 1}", acc))

    loss_rows: list[dict] = []
    result = None
    resume = args.resume
    try:
        for label, upto in boundaries:
            result = train(
                scene,
                provider,
                tconfig,
                resume_from=resume,
                checkpoint_path=ckpt,
                stop_after=upto,
            )
            loss_rows.extend(result.loss_log)
            resume = ckpt
            holdout = tconfig.holdout_camera
            if holdout is None:
                holdout = len(scene.cameras) - 1 if len(scene.cameras) >= 2 else 0
            stage_idx = next((i for i, (lbl, _) in enumerate(boundaries) if lbl == label)) - 1
            pool = (1.0,) if stage_idx < 0 else sched.pool(stage_idx)
            for s in pool:
                request = RenderRequest(
                    camera=scene.cameras[holdout],
                    scale_factor=s,
                    filters=tconfig.filters,
                    background=np.asarray(tconfig.background),
                    max_rates=result.scene.gaussians.max_rates,
                )
                image = render_forward(result.scene.gaussians, request).image
                write_png(image, os.path.join(renders_dir, f"{label}_s{s:g}.png"))
            print(f"{label}: step {result.global_step}", flush=True)
        if not result.completed:
            result = train(scene, provider, tconfig, resume_from=resume, checkpoint_path=ckpt)
            loss_rows.extend(result.loss_log)
    finally:
        if provider is not None:
            provider.close()

    save_scene(result.scene, os.path.join(out_dir, "trained"))
    metric_fields = ["stage", "scale", "camera", "psnr", "ssim", "against"]
    _write_csv(os.path.join(out_dir, "metrics.csv"), result.metrics, metric_fields)
    loss_fields = sorted({k for row in loss_rows for k in row})
    _write_csv(os.path.join(out_dir, "loss_log.csv"), loss_rows, loss_fields)

    from .plots import plot_loss_log, plot_stage_metrics

    plot_loss_log(loss_rows, os.path.join(out_dir, "loss.png"))
    plot_stage_metrics(result.metrics, os.path.join(out_dir, "metrics.png"))
    for m in result.metrics:
        stage = "warmup" if m["stage"] < 0 else f"stage{m['stage'] + 1}"
        print(f"{stage} scale {m['scale']:g}: PSNR {m['psnr']:.2f} SSIM {m['ssim']:.4f}")
    print(f"done in {result.duration_s:.1f}s, artifacts in {out_dir}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    scene, gaussians = _load_gaussians(args)
    if not 0 <= args.camera < len(scene.cameras):
        raise ConfigError(f"camera {args.camera} out of range for {len(scene.cameras)} cameras")
    request = RenderRequest(
        camera=scene.cameras[args.camera],
        scale_factor=args.scale,
        filters=_filters_from_flags(args),
        background=np.zeros(3),
        max_rates=gaussians.max_rates,
    )
    out = render_forward(gaussians, request)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_png(out.image, args.out)
    h, w = out.image.shape[:2]
    print(f"wrote {args.out} ({w}x{h}, scale {args.scale:g}, {out.duration_ms:.1f} ms)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    scene, gaussians = _load_gaussians(args)
    scales = _parse_scales(args.scales)
    if args.cameras == "holdout":
        cam_ids = [len(scene.cameras) - 1] if len(scene.cameras) >= 2 else [0]
    elif args.cameras == "all":
        cam_ids = list(range(len(scene.cameras)))
    else:
        cam_ids = [int(tok) for tok in args.cameras.split(",") if tok.strip()]
        for c in cam_ids:
            if not 0 <= c < len(scene.cameras):
                raise ConfigError(f"camera {c} out of range for {len(scene.cameras)} cameras")

    filters = _filters_from_flags(args)
    rows = []
    for cam_id in cam_ids:
        camera = scene.cameras[cam_id]
        for s in scales:
            request = RenderRequest(
                camera=camera,
                scale_factor=s,
                filters=filters,
                background=np.zeros(3),
                max_rates=gaussians.max_rates,
            )
            image = render_forward(gaussians, request).image
            if scene.gt_gaussians is not None:
                target = ground_truth_render(scene.gt_gaussians, camera, s)
                against = "ground_truth"
            elif s == 1.0 and scene.reference_images[cam_id] is not None:
                target = scene.reference_images[cam_id]
                against = "reference"
            else:
                raise AsgsrError(
                    f"no target at scale {s:g}: scene has no ground-truth splats and "
                    "references only cover scale 1"
                )
            rows.append(
                {
                    "camera": cam_id,
                    "scale": s,
                    "psnr": psnr_capped(image, target),
                    "ssim": ssim(image, target),
                    "against": against,
                }
            )

    os.makedirs(args.out, exist_ok=True)
    _echo_args(args, args.out)
    _write_csv(os.path.join(args.out, "eval.csv"), rows, ["camera", "scale", "psnr", "ssim", "against"])
    with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")

    from .plots import plot_eval

    plot_eval(rows, os.path.join(args.out, "eval.png"))
    for r in rows:
        print(f"camera {r['camera']} scale {r['scale']:g}: PSNR {r['psnr']:.2f} SSIM {r['ssim']:.4f}")
    return 0


def cmd_analyze_filter(args: argparse.Namespace) -> int:
    if not args.w_max > args.w_min:
        raise ConfigError(f"need w_max > w_min, got [{args.w_min}, {args.w_max}]")
    windows = np.linspace(args.w_min, args.w_max, args.steps)
    cfg = FilterConfig(epsilon=args.epsilon)
    rows = approx_error_curve(windows, args.sigma_g, cfg)
    os.makedirs(args.out, exist_ok=True)
    _echo_args(args, args.out)
    csv_path = os.path.join(args.out, "error_curve.csv")
    write_error_curve_csv(rows, csv_path)

    from .plots import plot_error_curve

    plot_error_curve(rows, os.path.join(args.out, "error_curve.png"))
    print(f"wrote {csv_path} ({len(rows)} rows, sigma_g {args.sigma_g:g}, epsilon {args.epsilon:g})")
    return 0


# benchmark filter configs: full scale-aware filtering, the same filters with
# the scale-aware toggles off (identical at s=1 by construction), and classic
# splatting with no smoothing at all
BENCH_CONFIGS = (
    ("scale_aware", FilterConfig()),
    ("scale_fixed", FilterConfig(scale_aware_3d=False, scale_aware_2d=False)),
    ("vanilla", FilterConfig.vanilla()),
)


def run_benchmark(
    gaussians: Gaussians | None,
    resolutions: list[tuple[int, int]],
    *,
    n_gaussians: int = 500,
    repeats: int = 3,
    seed: int = 0,
) -> list[dict]:
    """Median tiled-render time per (resolution, filter config) at s=1.

    Each row also carries the max abs pixel difference against the
    scale_aware image at the same resolution; for scale_fixed that
    difference is exactly zero at s=1.
    """
    rows = []
    for width, height in resolutions:
        cloud, camera = bench_scene(n_gaussians, (width, height), seed)
        if gaussians is not None:
            cloud = gaussians
        baseline = None
        for config_name, filters in BENCH_CONFIGS:
            request = RenderRequest(
                camera=camera, scale_factor=1.0, filters=filters, background=np.zeros(3)
            )
            image = render_forward(cloud, request).image
            if baseline is None:
                baseline = image
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                render_forward(cloud, request)
                times.append((time.perf_counter() - t0) * 1000.0)
            median_ms = statistics.median(times)
            rows.append(
                {
                    "width": width,
                    "height": height,
                    "config": config_name,
                    "n_gaussians": len(cloud),
                    "repeats": repeats,
                    "median_ms": median_ms,
                    "fps": 1000.0 / median_ms if median_ms > 0 else float("inf"),
                    "max_diff_vs_scale_aware": float(np.abs(image - baseline).max()),
                }
            )
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    resolutions = _parse_resolutions(args.resolutions)
    gaussians = None
    if args.checkpoint:
        gaussians = load_checkpoint(args.checkpoint).gaussians
    rows = run_benchmark(
        gaussians, resolutions, n_gaussians=args.n_gaussians, repeats=args.repeats, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    _echo_args(args, args.out)
    path = os.path.join(args.out, "bench.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")

    from .plots import plot_bench

    plot_bench(rows, os.path.join(args.out, "bench.png"))
    for r in rows:
        print(
            f"{r['width']}x{r['height']} {r['config']}: {r['median_ms']:.1f} ms "
            f"({r['fps']:.1f} FPS, {r['n_gaussians']} splats)"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asgsr",
        description="Scale-aware Gaussian-splat super-resolution: synthesize, train, render, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene with exact ground truth")
    p.add_argument("--preset", choices=PRESETS, default="checker-wall")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-gaussians", type=int, default=64)
    p.add_argument("--cells", type=int, default=10)
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--resolution", default="32x32", help="base (scale-1) resolution, WIDTHxHEIGHT")
    p.add_argument("--shrink", type=float, default=1.0, help="divide init scales by this factor")
    p.add_argument("--jitter", type=float, default=0.0, help="init position jitter, cell fraction")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the progressive schedule")
    p.add_argument("--scene", required=True, help="scene directory or scene.json")
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override config output_dir")
    p.add_argument("--provider-cmd", default=None, help="external prior command line")
    p.add_argument("--mock-prior", action="store_true", help="use the built-in linear mock prior")
    p.add_argument("--no-prior", action="store_true", help="disable prior guidance entirely")
    p.add_argument("--no-scale-aware-3d", action="store_true")
    p.add_argument("--no-scale-aware-2d", action="store_true")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one camera at an arbitrary scale")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--vanilla", action="store_true", help="disable all smoothing filters")
    p.add_argument("--no-scale-aware-3d", action="store_true")
    p.add_argument("--no-scale-aware-2d", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM per scale against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scales", default="1,2,3.5")
    p.add_argument("--cameras", default="holdout", help="'holdout', 'all', or comma-separated ids")
    p.add_argument("--out", required=True)
    p.add_argument("--vanilla", action="store_true")
    p.add_argument("--no-scale-aware-3d", action="store_true")
    p.add_argument("--no-scale-aware-2d", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-filter", help="approximation-error curve CSV + plot")
    p.add_argument("--w-min", type=float, default=0.5)
    p.add_argument("--w-max", type=float, default=4.0)
    p.add_argument("--steps", type=int, default=36)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--sigma-g", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_filter)

    p = sub.add_parser("bench", help="tiled rasterizer timings per resolution")
    p.add_argument("--resolutions", default=DEFAULT_BENCH_RESOLUTIONS)
    p.add_argument("--n-gaussians", type=int, default=500)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None, help="bench these trained splats instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AsgsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
