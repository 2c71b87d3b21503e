"""Built-in oracle checks, one line of output per check.

These mirror the heart of the test suite in a dependency-free form so a
deployed build can verify itself (`sweepsplat selftest`). Each check
compares a kernel against an independent scalar-math oracle or asserts a
structural invariant.
"""

from __future__ import annotations

import tempfile
import os

import numpy as np

from . import cameras, cost_volume, descriptors, features, gaussians, kernels, metrics, rasterizer
from .config import PipelineConfig
from .kernels import SeededRng
from .synthetic import generate_synthetic_scene


def _conv2d_oracle(x, w, b):
    c_out, c_in, k, _ = w.shape
    h, width = x.shape[1:]
    p = k // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p)))
    out = np.zeros((c_out, h, width))
    for o in range(c_out):
        for i in range(h):
            for j in range(width):
                acc = 0.0
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            acc += xp[c, i + a, j + bb] * w[o, c, a, bb]
                out[o, i, j] = acc + b[o]
    return out


def run_selftest(seed: int = 0, log=print) -> bool:
    rng = np.random.default_rng(seed)
    srng = SeededRng(seed)
    ok = True

    def check(name: str, passed: bool):
        nonlocal ok
        log(f"{'ok  ' if passed else 'FAIL'} {name}")
        ok = ok and passed

    x = rng.standard_normal((2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    got = kernels.conv2d(x, w, b)
    check("conv2d vs quadruple-loop oracle", np.allclose(got, _conv2d_oracle(x, w, b), atol=1e-5))

    feat = rng.standard_normal((2, 4, 6)).astype(np.float32)
    lattice = np.stack(np.meshgrid(np.arange(6.0), np.arange(4.0))[::-1][::-1])
    sampled = kernels.bilinear_sample(feat, lattice)
    check("bilinear sampling exact on the lattice", np.allclose(sampled, feat, atol=1e-6))

    logits = rng.standard_normal((5, 3, 3)).astype(np.float32)
    p = kernels.softmax_axis(logits, axis=0)
    check("softmax slices sum to one", np.allclose(p.sum(axis=0), 1.0, atol=1e-6))

    cam = cameras.PinholeCamera(
        intrinsics=np.array([[50.0, 0, 16], [0, 50.0, 12], [0, 0, 1]]),
        rotation=np.eye(3),
        translation=np.zeros(3),
        width=32,
        height=24,
        depth_min=1.0,
        depth_max=10.0,
    )
    h_id = cameras.homography_for_plane(cam, cam, 4.0)
    check("homography of a camera with itself is identity", np.allclose(h_id / h_id[2, 2], np.eye(3), atol=1e-9))

    depth_map = cameras.DepthMap(np.full((24, 32), 3.0, dtype=np.float32), None)
    pts = cameras.backproject_depth(depth_map, cam)
    uv, z = cam.project(pts)
    grid = cam.pixel_centers()
    err = np.max(np.hypot(uv[..., 0] - grid[0], uv[..., 1] - grid[1]))
    check("backproject then project returns pixel centers", err < 1e-4 and np.allclose(z, 3.0, atol=1e-5))

    f = rng.standard_normal((3, 4, 5)).astype(np.float32)
    t_h, t_w = features.coord_pool(f)
    check(
        "directional pooling equals axis means",
        np.allclose(t_h[:, :, 0], f.mean(axis=2), atol=1e-6) and np.allclose(t_w[:, 0, :], f.mean(axis=1), atol=1e-6),
    )
    zero_w = np.zeros((3, 3, 3), dtype=np.float32)
    maps = features.coord_attention_maps(t_h, t_w, zero_w, np.zeros(3, dtype=np.float32))
    modulated = features.coord_modulate(f, maps)
    check("zeroed attention scales features by exactly 0.25", np.array_equal(modulated, f * np.float32(0.25)))

    hyp = cameras.DepthHypotheses(np.array([2.0, 4.0, 6.0], dtype=np.float32), "coarse")
    prob = cost_volume.ProbabilityVolume(np.full((3, 2, 2), 1.0 / 3.0, dtype=np.float32))
    reg = cost_volume.regress_depth(prob, hyp)
    check("uniform probabilities regress to the mean depth", np.allclose(reg.values, 4.0, atol=1e-5))

    tokens = rng.standard_normal((6, 3, 10)).astype(np.float32)
    attn_w = descriptors.init_cross_view_attention_weights(srng, kv_dim=10)
    combined = rng.standard_normal((6, 24)).astype(np.float32)
    out, weights_attn = descriptors.cross_view_attention(combined, tokens, attn_w, return_weights=True)
    perm = tokens[:, [2, 0, 1], :]
    out_perm = descriptors.cross_view_attention(combined, perm, attn_w)
    check(
        "cross-view attention sums to one and ignores view order",
        np.allclose(weights_attn.sum(axis=1), 1.0, atol=1e-6) and np.allclose(out, out_perm, atol=1e-6),
    )

    head_w = gaussians.init_decode_weights(srng, 24)
    feats_g = rng.standard_normal((12, 24)).astype(np.float32)
    centers = rng.standard_normal((12, 3)).astype(np.float32)
    cloud = gaussians.decode_params(feats_g, centers, head_w, scale_max=10.0)
    try:
        cloud.validate()
        check("decoded cloud satisfies every range invariant", True)
    except ValueError:
        check("decoded cloud satisfies every range invariant", False)

    fusion_w = gaussians.init_fusion_weights(srng, 24, zero_final=True)
    wmod = gaussians.cross_scale_weights(
        rng.standard_normal((4, 24)).astype(np.float32),
        rng.standard_normal((16, 24)).astype(np.float32),
        (2, 2),
        fusion_w,
    )
    check("zero-initialized fusion head is the identity on opacity", np.array_equal(wmod, np.ones_like(wmod)))

    render_cam = cameras.PinholeCamera(
        intrinsics=np.array([[40.0, 0, 16], [0, 40.0, 16], [0, 0, 1]]),
        rotation=np.eye(3),
        translation=np.zeros(3),
        width=32,
        height=32,
        depth_min=0.5,
        depth_max=20.0,
    )
    # Center chosen so the projection lands exactly on pixel (16, 16)'s
    # center at image coordinate (16.5, 16.5).
    single = gaussians.GaussianCloud(
        centers=np.array([[0.0625, 0.0625, 5.0]], dtype=np.float32),
        scales=np.full((1, 3), 0.12, dtype=np.float32),
        rotations=np.array([[1.0, 0, 0, 0]], dtype=np.float32),
        opacities=np.array([0.9], dtype=np.float32),
        colors=np.ones((1, 3), dtype=np.float32),
    )
    img = rasterizer.rasterize(single, render_cam)
    center_px = img.color[0, 16, 16]
    check("single splat peaks at its own opacity", abs(float(center_px) - 0.9) < 1e-3)

    ups = np.zeros((3, 32, 32), dtype=np.float32)
    ups[:, 16, 16] = 1.0
    grad_c, grad_a = rasterizer.rasterize_backward_color_opacity(single, render_cam, ups)
    fd = kernels.finite_difference_probe(
        lambda a: float(
            np.sum(
                rasterizer.rasterize(
                    gaussians.GaussianCloud(
                        centers=single.centers,
                        scales=single.scales,
                        rotations=single.rotations,
                        opacities=a,
                        colors=single.colors,
                    ),
                    render_cam,
                ).color
                * ups
            )
        ),
        single.opacities,
    )
    rel = abs(float(grad_a[0] - fd[0])) / max(1e-9, abs(float(fd[0])))
    check("analytic opacity gradient matches finite differences", rel < 1e-3)

    a_img = rng.random((3, 16, 16)).astype(np.float32)
    check("ssim of an image with itself is exactly one", metrics.ssim(a_img, a_img) == 1.0)

    lw = metrics.LossWeights()
    t_loss, _ = metrics.total_loss([a_img, a_img], a_img, lw)
    check("perfect renders give zero loss", t_loss == 0.0)

    bundle = generate_synthetic_scene("plane", 3, resolution=(32, 40), seed=seed)
    check(
        "plane scene has constant target depth",
        np.allclose(bundle.target_depth.values, bundle.target_depth.values[0, 0], atol=1e-5),
    )

    with tempfile.TemporaryDirectory() as tmp:
        from . import imgio, weights_io

        ppm = os.path.join(tmp, "x.ppm")
        imgio.write_ppm(ppm, bundle.target_image)
        round_trip = imgio.read_ppm(ppm)
        check("ppm round trip within one quantization step", np.max(np.abs(round_trip - np.clip(bundle.target_image, 0, 1))) <= 0.5 / 255 + 1e-6)

        pfm = os.path.join(tmp, "d.pfm")
        imgio.write_pfm(pfm, bundle.target_depth.values)
        check("pfm round trip is lossless", np.array_equal(imgio.read_pfm(pfm), bundle.target_depth.values))

        ntw = os.path.join(tmp, "w.ntw")
        weights_io.write_weights(ntw, head_w)
        back = weights_io.read_weights(ntw)
        check(
            "weight file round trip is lossless",
            set(back) == set(head_w) and all(np.array_equal(back[k], head_w[k]) for k in head_w),
        )

    return ok
