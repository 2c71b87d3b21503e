"""Command-line interface.

Subcommands:

    render      run the pipeline on a scene directory and write artifacts
    depth-eval  compare a predicted depth PFM against a reference
    gradcheck   verify rasterizer gradients against finite differences
    selftest    run the built-in oracle suite
    synth       generate a synthetic scene directory

Exit codes: 0 success, 1 data or verification error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import PipelineConfig
from .errors import ConfigError, FormatError, ShapeError
from .gaussians import GaussianCloud, save_gc01, save_ply_text
from .imgio import read_pfm, write_pfm, write_ppm, write_raw_f32
from .kernels import SeededRng, bilinear_sample, finite_difference_probe
from .metrics import depth_metrics, write_metrics_report
from .pipeline import run_pipeline
from .scene import load_scene_dir, make_bundle, write_scene_dir
from .synthetic import SCENE_KINDS, generate_scene_views
from .weights_io import read_weights


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweepsplat", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    render = sub.add_parser("render", help="run the pipeline on a scene directory")
    render.add_argument("--scene", required=True, help="scene directory (images/, cams/, optional gt/)")
    render.add_argument("--config", required=True, help="pipeline config file")
    render.add_argument("--weights", default=None, help="NTW1 weight file (learned mode)")
    render.add_argument("--out", required=True, help="output directory")
    render.add_argument("--target", type=int, default=0, help="target view index (default 0)")
    render.add_argument("--raw", action="store_true", help="also dump the raw float32 render")

    deval = sub.add_parser("depth-eval", help="depth metrics between two PFM maps")
    deval.add_argument("--pred", required=True)
    deval.add_argument("--gt", required=True)
    deval.add_argument("--mask", default=None, help="optional PFM mask, valid where > 0.5")

    grad = sub.add_parser("gradcheck", help="rasterizer gradients vs finite differences")
    grad.add_argument("--seed", type=int, default=0)

    sub.add_parser("selftest", help="run the built-in oracle suite")

    synth = sub.add_parser("synth", help="generate a synthetic scene directory")
    synth.add_argument("--spec", required=True, choices=SCENE_KINDS)
    synth.add_argument("--out", required=True)
    synth.add_argument("--views", type=int, default=3, help="number of source views")
    synth.add_argument("--size", default="128x160", help="HxW resolution (default 128x160)")
    synth.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_render(args) -> int:
    config = PipelineConfig.load(args.config)
    weights = read_weights(args.weights) if args.weights else None
    views = load_scene_dir(args.scene)
    bundle = make_bundle(views, args.target, config.source_views)
    result = run_pipeline(bundle, config, weights)

    os.makedirs(args.out, exist_ok=True)
    write_ppm(os.path.join(args.out, "render.ppm"), result.image.color)
    if args.raw:
        write_raw_f32(os.path.join(args.out, "render.f32"), result.image.color)
    write_pfm(os.path.join(args.out, "depth_coarse.pfm"), result.coarse.depth.values)
    write_pfm(os.path.join(args.out, "depth_fine.pfm"), result.fine.depth.values)
    write_pfm(os.path.join(args.out, "mask_fine.pfm"), result.fine.depth.valid.astype(np.float32))
    save_gc01(os.path.join(args.out, "gaussians.gc01"), result.fine.cloud)
    save_ply_text(os.path.join(args.out, "gaussians.ply"), result.fine.cloud)
    if result.metrics is not None:
        write_metrics_report(
            os.path.join(args.out, "metrics.txt"),
            os.path.join(args.out, "metrics.jsonl"),
            [{"view": args.target, **result.metrics}],
        )
        print(f"psnr {result.metrics['psnr']:.3f} ssim {result.metrics['ssim']:.4f}")
    print(f"wrote render + depth + cloud to {args.out}")
    return 0


def _resample_to(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample aligned at pixel centers (for reference maps whose
    resolution differs from the prediction)."""
    if values.shape == shape:
        return values
    h, w = shape
    sy = values.shape[0] / h
    sx = values.shape[1] / w
    ys = (np.arange(h) + 0.5) * sy - 0.5
    xs = (np.arange(w) + 0.5) * sx - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return bilinear_sample(values[None], np.stack([xx, yy]))[0]


def _cmd_depth_eval(args) -> int:
    pred = read_pfm(args.pred)
    gt = _resample_to(read_pfm(args.gt), pred.shape)
    valid = None
    if args.mask:
        valid = _resample_to(read_pfm(args.mask), pred.shape) > 0.5
    stats = depth_metrics(pred, gt, valid)
    for key in ("abs_err", "acc_2", "acc_10"):
        print(f"{key} {stats[key]:.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .cameras import PinholeCamera
    from .rasterizer import rasterize, rasterize_backward_color_opacity

    rng = np.random.default_rng(args.seed)
    cam = PinholeCamera(
        intrinsics=np.array([[40.0, 0.0, 16.0], [0.0, 40.0, 16.0], [0.0, 0.0, 1.0]]),
        rotation=np.eye(3),
        translation=np.zeros(3),
        width=32,
        height=32,
        depth_min=0.5,
        depth_max=50.0,
    )
    worst = 0.0
    for trial, count in enumerate([1, 4, 16, 32]):
        cloud = GaussianCloud(
            centers=np.column_stack(
                [rng.uniform(-1.5, 1.5, count), rng.uniform(-1.5, 1.5, count), rng.uniform(3.0, 8.0, count)]
            ).astype(np.float32),
            scales=rng.uniform(0.05, 0.4, (count, 3)).astype(np.float32),
            rotations=np.tile(np.array([1.0, 0, 0, 0], dtype=np.float32), (count, 1)),
            opacities=rng.uniform(0.2, 0.9, count).astype(np.float32),
            colors=rng.uniform(0.1, 0.9, (count, 3)).astype(np.float32),
        )
        upstream = rng.random((3, 32, 32)).astype(np.float32)
        grad_c, grad_a = rasterize_backward_color_opacity(cloud, cam, upstream)

        def loss_alpha(a):
            c2 = GaussianCloud(cloud.centers, cloud.scales, cloud.rotations, a, cloud.colors)
            return float(np.sum(rasterize(c2, cam).color.astype(np.float64) * upstream))

        def loss_color(c):
            c2 = GaussianCloud(cloud.centers, cloud.scales, cloud.rotations, cloud.opacities, c.reshape(-1, 3))
            return float(np.sum(rasterize(c2, cam).color.astype(np.float64) * upstream))

        fd_a = finite_difference_probe(loss_alpha, cloud.opacities)
        fd_c = finite_difference_probe(loss_color, cloud.colors).reshape(-1, 3)
        scale = max(1e-6, float(np.max(np.abs(fd_a))), float(np.max(np.abs(fd_c))))
        err = max(float(np.max(np.abs(fd_a - grad_a))), float(np.max(np.abs(fd_c - grad_c)))) / scale
        worst = max(worst, err)
        print(f"cloud of {count:2d} gaussians: max relative gradient error {err:.2e}")
    if worst >= 1e-3:
        print(f"FAIL: worst relative error {worst:.2e} >= 1e-3", file=sys.stderr)
        return 1
    print(f"ok: worst relative error {worst:.2e} < 1e-3")
    return 0


def _cmd_selftest(_args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def _cmd_synth(args) -> int:
    try:
        h, w = (int(p) for p in args.size.lower().split("x"))
    except ValueError:
        print(f"bad --size {args.size!r}, expected HxW like 128x160", file=sys.stderr)
        return 2
    views = generate_scene_views(args.spec, args.views, (h, w), args.seed)
    write_scene_dir(args.out, views)
    print(f"wrote {len(views)} views ({args.spec}) to {args.out}")
    return 0


_COMMANDS = {
    "render": _cmd_render,
    "depth-eval": _cmd_depth_eval,
    "gradcheck": _cmd_gradcheck,
    "selftest": _cmd_selftest,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FormatError, ConfigError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
