"""Two-stage coarse-to-fine orchestration.

Stage 1 sweeps the full depth range at quarter resolution; stage 2 re-sweeps
a narrow per-pixel window around the upsampled coarse depth at half
resolution; the fine-stage Gaussians are rasterized at full image
resolution. Learned mode runs the attention/decoding stack with weights from
a file or a seeded initializer; photometric mode is weight-free and builds
Gaussians in closed form from multi-view color agreement, which is the mode
geometric verification runs in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import DepthMap, PinholeCamera, backproject_centers_rows, sample_depth_hypotheses
from .config import PipelineConfig
from .cost_volume import (
    CostVolume,
    build_cost_volume,
    init_regularizer_weights,
    regress_depth,
    regularize,
    sample_voxel_features,
    sample_voxel_features_bypass,
    to_probability,
)
from .descriptors import (
    PerViewPixelFeatures,
    assemble_view_features,
    cross_view_attention,
    fuse_combined,
    init_cross_view_attention_weights,
    init_view_aggregator_weights,
    view_aggregate,
)
from .errors import ShapeError
from .features import attend_and_fuse, extract_pyramid, init_feature_weights, photometric_pyramid
from .gaussians import (
    GaussianCloud,
    apply_modulation,
    cross_scale_weights,
    decode_params,
    init_decode_weights,
    init_fusion_weights,
)
from .kernels import SeededRng, bilinear_upsample_x2
from .metrics import LossWeights, depth_metrics, mse, psnr, ssim, total_loss
from .parallel import parallel_map
from .rasterizer import RenderedImage, rasterize
from .scene import SceneBundle, select_source_views

_F32 = np.float32
_F64 = np.float64

RGB_CHANNELS = 3
RAY_CHANNELS = 4


@dataclass
class StageOutput:
    depth: DepthMap
    cloud: GaussianCloud
    camera: PinholeCamera  # stage-resolution target camera
    features: np.ndarray | None  # per-Gaussian features (learned mode)


@dataclass
class PipelineResult:
    stages: list  # [coarse StageOutput, fine StageOutput]
    image: RenderedImage
    metrics: dict | None

    @property
    def coarse(self) -> StageOutput:
        return self.stages[0]

    @property
    def fine(self) -> StageOutput:
        return self.stages[1]


def init_pipeline_weights(config: PipelineConfig, rng: SeededRng | None = None) -> dict[str, np.ndarray]:
    """Seeded weights for every learned block, keyed by hierarchical name."""
    rng = rng or SeededRng(config.seed)
    kv_dim = config.feature_channels + RGB_CHANNELS + RAY_CHANNELS
    store: dict[str, np.ndarray] = {}
    store.update(
        init_feature_weights(
            rng,
            in_channels=3,
            trunk_fine=config.encoder_width_fine,
            trunk_coarse=config.encoder_width_coarse,
            out_channels=config.feature_channels,
        )
    )
    store.update(init_regularizer_weights(rng, config.feature_channels, config.regularizer_base_channels))
    store.update(init_view_aggregator_weights(rng, kv_dim))
    store.update(
        init_cross_view_attention_weights(
            rng, kv_dim=kv_dim, attn_dim=config.attention_dim, out_dim=config.gaussian_feature_dim
        )
    )
    store.update(init_decode_weights(rng, config.gaussian_feature_dim, config.head_hidden_width))
    store.update(init_fusion_weights(rng, config.gaussian_feature_dim, config.head_hidden_width))
    return store


def _median3(depth: DepthMap) -> DepthMap:
    """3x3 median over the depth values; isolated softargmax outliers would
    otherwise bleed into the fine window centers through the upsampling."""
    padded = np.pad(depth.values, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return DepthMap(np.median(windows, axis=(2, 3)).astype(_F32), depth.valid)


def _upsample_depth(depth: DepthMap) -> DepthMap:
    values = bilinear_upsample_x2(depth.values[None])[0]
    valid = np.repeat(np.repeat(depth.valid, 2, axis=0), 2, axis=1)
    return DepthMap(values, valid)


def _photometric_cloud(
    tokens: PerViewPixelFeatures,
    centers_rows: np.ndarray,
    depth_rows: np.ndarray,
    camera: PinholeCamera,
    config: PipelineConfig,
) -> GaussianCloud:
    """Closed-form Gaussians: multi-view mean color, fixed opacity, isotropic
    scale matched to the pixel footprint at the regressed depth."""
    c = tokens.feature_channels
    rgb = tokens.values[:, :, c : c + RGB_CHANNELS].astype(_F64)
    valid = tokens.valid.astype(_F64)[:, :, None]
    seen = valid.sum(axis=1)[:, 0]
    colors = (rgb * valid).sum(axis=1) / np.maximum(seen, 1.0)[:, None]
    colors = np.clip(colors, 0.0, 1.0)

    fx = camera.intrinsics[0, 0]
    pixel_world = depth_rows.astype(_F64) / fx
    iso = config.photometric_scale * pixel_world
    scales = np.repeat(iso[:, None], 3, axis=1)

    m = centers_rows.shape[0]
    rot = np.zeros((m, 4), dtype=_F32)
    rot[:, 0] = 1.0
    alphas = np.full(m, config.photometric_opacity, dtype=_F32)
    alphas[seen == 0] = 1e-5  # unobserved pixels should not pollute the render
    return GaussianCloud(
        centers=centers_rows.astype(_F32),
        scales=scales.astype(_F32),
        rotations=rot,
        opacities=alphas,
        colors=colors.astype(_F32),
    )


def _scene_scale_max(camera: PinholeCamera) -> float:
    """Rough scene diagonal: frustum extent at the far plane."""
    span_x = camera.depth_max * camera.width / camera.intrinsics[0, 0]
    span_y = camera.depth_max * camera.height / camera.intrinsics[1, 1]
    depth_span = camera.depth_max - camera.depth_min
    return float(np.sqrt(span_x**2 + span_y**2 + depth_span**2))


def _run_stage(
    stage_cam: PinholeCamera,
    src_cams_full: list,
    src_cams_stage: list,
    stage_features: list,
    src_images: list,
    hypotheses,
    temperature: float,
    config: PipelineConfig,
    weights,
    prior_valid: np.ndarray | None = None,
) -> StageOutput:
    volume = build_cost_volume(stage_cam, src_cams_stage, stage_features, hypotheses)
    reg_mode = config.resolved_regularizer()
    logits, reg_features = regularize(volume, weights, mode=reg_mode)
    prob = to_probability(logits, temperature)
    valid = volume.pixel_valid
    if prior_valid is not None:
        valid = valid & prior_valid  # a window centered on a bad estimate stays bad
    depth = regress_depth(prob, hypotheses, valid=valid)
    tokens = assemble_view_features(stage_cam, src_cams_full, stage_features, src_images, depth)
    centers = backproject_centers_rows(depth, stage_cam)

    if config.feature_mode == "photometric":
        cloud = _photometric_cloud(tokens, centers, depth.values.reshape(-1), stage_cam, config)
        return StageOutput(depth=depth, cloud=cloud, camera=stage_cam, features=None)

    if reg_features is not None:
        voxel = sample_voxel_features(reg_features, hypotheses, depth)
    else:
        voxel = sample_voxel_features_bypass(volume, depth)
    aggregated = view_aggregate(tokens, weights)
    combined = fuse_combined(aggregated, voxel)
    gaussian_features = cross_view_attention(combined, tokens.values, weights)
    cloud = decode_params(
        gaussian_features,
        centers,
        weights,
        scale_max=_scene_scale_max(stage_cam),
        hidden=config.head_hidden_width,
    )
    return StageOutput(depth=depth, cloud=cloud, camera=stage_cam, features=gaussian_features)


def run_pipeline(bundle: SceneBundle, config: PipelineConfig, weights=None) -> PipelineResult:
    """Full coarse-to-fine pass over one bundle.

    Learned mode without explicit weights falls back to the seeded
    initializer so runs stay reproducible.
    """
    config.validate()
    h, w = bundle.target_camera.height, bundle.target_camera.width
    if h % 8 or w % 8:
        raise ShapeError(f"run_pipeline: image extents {h}x{w} must be divisible by 8")
    learned = config.feature_mode == "learned"
    if learned and weights is None:
        weights = init_pipeline_weights(config)

    if learned:
        pyramids = parallel_map(lambda img: extract_pyramid(img, weights), bundle.source_images)
        fused = parallel_map(lambda p: attend_and_fuse(p, weights), pyramids)
        coarse_feats = [p.levels[0] for p in pyramids]
        fine_feats = list(fused)
    else:
        pyramids = parallel_map(photometric_pyramid, bundle.source_images)
        coarse_feats = [p.levels[0] for p in pyramids]
        fine_feats = [p.levels[1] for p in pyramids]

    cam_coarse = bundle.target_camera.scaled(0.25)
    cam_fine = bundle.target_camera.scaled(0.5)
    src_coarse = [c.scaled(0.25) for c in bundle.source_cameras]
    src_fine = [c.scaled(0.5) for c in bundle.source_cameras]

    coarse_hyp = sample_depth_hypotheses(cam_coarse, config.coarse_hypotheses, config.hypothesis_spacing)
    stage1 = _run_stage(
        cam_coarse,
        bundle.source_cameras,
        src_coarse,
        coarse_feats,
        bundle.source_images,
        coarse_hyp,
        config.coarse_temperature,
        config,
        weights,
    )

    up_depth = _upsample_depth(_median3(stage1.depth))
    radius = config.fine_radius_scale * coarse_hyp.mean_spacing()
    fine_hyp = sample_depth_hypotheses(
        cam_fine, config.fine_hypotheses, config.hypothesis_spacing, center=up_depth, radius=radius
    )
    stage2 = _run_stage(
        cam_fine,
        bundle.source_cameras,
        src_fine,
        fine_feats,
        bundle.source_images,
        fine_hyp,
        config.fine_temperature,
        config,
        weights,
        prior_valid=up_depth.valid,
    )

    if learned:
        modulation = cross_scale_weights(
            stage1.features,
            stage2.features,
            (cam_coarse.height, cam_coarse.width),
            weights,
            hidden=config.head_hidden_width,
        )
        stage2 = StageOutput(
            depth=stage2.depth,
            cloud=apply_modulation(stage2.cloud, modulation),
            camera=stage2.camera,
            features=stage2.features,
        )

    image = rasterize(stage2.cloud, bundle.target_camera, tile_size=config.tile_size)
    metrics = None
    if bundle.target_image is not None:
        metrics = evaluate(bundle, config, [stage1, stage2], image)
    return PipelineResult(stages=[stage1, stage2], image=image, metrics=metrics)


def _sample_gt_depth(gt: DepthMap, stage_shape: tuple[int, int]) -> np.ndarray:
    """Ground-truth depth at stage-resolution pixel centers."""
    h, w = stage_shape
    gh, gw = gt.shape
    sy = gh / h
    sx = gw / w
    ys = (np.arange(h) + 0.5) * sy - 0.5
    xs = (np.arange(w) + 0.5) * sx - 0.5
    xx, yy = np.meshgrid(xs, ys)
    from .kernels import bilinear_sample

    return bilinear_sample(gt.values[None], np.stack([xx, yy]))[0]


def evaluate(bundle: SceneBundle, config: PipelineConfig, stages, image: RenderedImage) -> dict:
    """Image metrics against the target ground truth, plus depth metrics when
    GT depth is available. Per-stage renders feed the two-stage loss."""
    gt = bundle.target_image
    renders = [
        rasterize(stage.cloud, bundle.target_camera, tile_size=config.tile_size).color for stage in stages[:-1]
    ]
    renders.append(image.color)
    loss_weights = LossWeights(
        beta_structure=config.beta_structure,
        beta_perceptual=config.beta_perceptual,
        stage_gammas=(config.gamma_coarse, config.gamma_fine),
    )
    loss, breakdown = total_loss(renders, gt, loss_weights)
    record = {
        "psnr": psnr(image.color, gt),
        "ssim": ssim(image.color, gt),
        "mse": mse(image.color, gt),
        "loss_total": loss,
    }
    for i, stage_terms in enumerate(breakdown):
        for key, value in stage_terms.items():
            record[f"stage{i}_{key}"] = value
    if bundle.target_depth is not None:
        fine = stages[-1]
        gt_at_stage = _sample_gt_depth(bundle.target_depth, fine.depth.shape)
        depth_stats = depth_metrics(fine.depth.values, gt_at_stage, fine.depth.valid)
        record.update({f"depth_{k}": v for k, v in depth_stats.items()})
    return record


__all__ = [
    "PipelineResult",
    "StageOutput",
    "init_pipeline_weights",
    "run_pipeline",
    "select_source_views",
    "evaluate",
]
