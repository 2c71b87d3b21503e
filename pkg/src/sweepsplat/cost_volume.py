"""Plane-sweep cost volume, regularization, and depth regression.

Source features are warped into the target frustum at every depth
hypothesis and aggregated across views by per-channel variance (weighted by
the warp validity masks, reduced in sorted view order so results do not
depend on worker scheduling). A small 3D conv encoder-decoder turns the
volume into depth logits; a weight-free bypass negates the mean variance
instead, which keeps the geometric path runnable without training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cameras import DepthHypotheses, DepthMap, PinholeCamera
from .errors import ShapeError
from .kernels import SeededRng, bilinear_sample, conv3d, relu, softmax_axis, trilinear_upsample_x2

_F32 = np.float32
_F64 = np.float64


@dataclass
class CostVolume:
    values: np.ndarray  # (G, D, H, W) float32
    hypotheses: DepthHypotheses
    camera: PinholeCamera
    valid_views: np.ndarray  # (D, H, W) uint8 count of views that saw the voxel

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=_F32)
        if self.values.ndim != 4:
            raise ShapeError(f"CostVolume: values rank {self.values.ndim} != 4")
        if self.values.shape[1] != self.hypotheses.count:
            raise ShapeError(
                f"CostVolume: depth axis 1 has {self.values.shape[1]} slices, hypotheses carry {self.hypotheses.count}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("CostVolume: non-finite values")

    @property
    def pixel_valid(self) -> np.ndarray:
        """Pixels with two-view evidence across the whole sweep.

        Voxels seen by fewer than two views carry a flat zero cost, so a
        pixel whose sweep leaves the source frusta anywhere has incomplete
        evidence and its regressed depth is flagged invalid.
        """
        return (self.valid_views >= 2).all(axis=0)


@dataclass
class ProbabilityVolume:
    values: np.ndarray  # (D, H, W) float32, sums to 1 along D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=_F32)
        if self.values.ndim != 3:
            raise ShapeError(f"ProbabilityVolume: rank {self.values.ndim} != 3")
        if np.any(self.values < 0):
            raise ValueError("ProbabilityVolume: negative entries")
        sums = self.values.astype(_F64).sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > 1e-5:
            raise ValueError("ProbabilityVolume: depth slices do not sum to 1")


def _target_world_points(camera: PinholeCamera, depths: np.ndarray) -> np.ndarray:
    """World points of every target pixel at every hypothesis, (D, H, W, 3)."""
    grid = camera.pixel_centers()
    homo = np.stack([grid[0], grid[1], np.ones_like(grid[0])])
    rays = np.einsum("ij,jhw->ihw", np.linalg.inv(camera.intrinsics), homo, optimize=False)
    cam_pts = rays[None] * depths[:, None].astype(_F64)  # (D, 3, H, W)
    shifted = cam_pts - camera.translation.reshape(1, 3, 1, 1)
    return np.einsum("ji,djhw->dhwi", camera.rotation, shifted, optimize=False)


def warp_source_to_hypotheses(
    feature: np.ndarray, src_cam: PinholeCamera, tgt_cam: PinholeCamera, hypotheses: DepthHypotheses
):
    """Sample a source feature map at every target pixel and hypothesis.

    Returns (C, D, H, W) samples and a (D, H, W) validity mask covering both
    in-bounds sampling and positive source depth.
    """
    depths = hypotheses.values.astype(_F64)
    if not hypotheses.per_pixel:
        depths = np.broadcast_to(depths[:, None, None], (hypotheses.count, tgt_cam.height, tgt_cam.width))
    world = _target_world_points(tgt_cam, depths)
    uv, src_depth = src_cam.project(world)
    coords = np.stack([uv[..., 0] - 0.5, uv[..., 1] - 0.5])
    front = src_depth > 0
    coords = np.where(front[None], coords, -1e9)
    sampled, mask = bilinear_sample(feature, coords, return_mask=True)
    return sampled, mask & front


def build_cost_volume(
    tgt_cam: PinholeCamera,
    src_cams: Sequence[PinholeCamera],
    features: Sequence[np.ndarray],
    hypotheses: DepthHypotheses,
) -> CostVolume:
    """Variance-over-views matching cost, (C, D, H, W).

    Voxels seen by a single view get zero variance; voxels seen by none get
    zero cost. ``valid_views`` records the per-voxel view count so consumers
    can tell the difference.
    """
    if len(src_cams) < 2:
        raise ShapeError(f"build_cost_volume: need at least 2 source views, got {len(src_cams)}")
    if len(src_cams) != len(features):
        raise ShapeError(f"build_cost_volume: {len(src_cams)} cameras but {len(features)} feature maps")
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise ShapeError(f"build_cost_volume: source features disagree on shape: {sorted(shapes)}")

    warped = []
    masks = []
    for i in range(len(src_cams)):  # sorted view order fixes the reduction
        s, m = warp_source_to_hypotheses(features[i], src_cams[i], tgt_cam, hypotheses)
        warped.append(s)
        masks.append(m)

    count = np.zeros(masks[0].shape, dtype=np.int64)
    total = np.zeros(warped[0].shape, dtype=_F64)
    for s, m in zip(warped, masks):
        count += m
        total += s.astype(_F64) * m[None]
    denom = np.maximum(count, 1)
    mean = total / denom[None]
    var = np.zeros_like(total)
    for s, m in zip(warped, masks):
        diff = (s.astype(_F64) - mean) * m[None]
        var += diff * diff
    var /= denom[None]
    return CostVolume(
        values=var.astype(_F32),
        hypotheses=hypotheses,
        camera=tgt_cam,
        valid_views=count.astype(np.uint8),
    )


def init_regularizer_weights(rng: SeededRng, in_channels: int, base: int = 8) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}

    def conv(name, c_out, c_in, k=3):
        store[f"{name}.weight"] = rng.uniform_init(f"{name}.weight", (c_out, c_in, k, k, k), c_in * k**3)
        store[f"{name}.bias"] = np.zeros(c_out, dtype=_F32)

    conv("reg.enc0", base, in_channels)
    conv("reg.enc1", 2 * base, base)
    conv("reg.enc2", 2 * base, 2 * base)
    conv("reg.dec", base, 2 * base)
    conv("reg.out", 1, base)
    return store


def _match_spatial(x: np.ndarray, target: tuple[int, ...]) -> np.ndarray:
    """Trim or edge-pad trailing spatial axes to a target shape."""
    slicer = (slice(None),) + tuple(slice(0, t) for t in target)
    x = x[slicer]
    pads = [(0, 0)] + [(0, t - s) for s, t in zip(x.shape[1:], target)]
    if any(p[1] for p in pads):
        x = np.pad(x, pads, mode="edge")
    return x


def regularize(volume: CostVolume, weights: Mapping[str, np.ndarray] | None = None, mode: str = "learned"):
    """Collapse the cost volume to depth logits, (D, H, W).

    Learned mode runs the 3D encoder-decoder and also returns its
    penultimate ``base``-channel volume (the voxel feature source). Bypass
    mode negates the channel-mean cost, needs no weights, and returns None
    for the feature volume.
    """
    if mode == "bypass":
        logits = -volume.values.astype(_F64).mean(axis=0)
        return logits.astype(_F32), None
    if mode != "learned":
        raise ValueError(f"regularize: unknown mode {mode!r}")
    if weights is None:
        raise ValueError("regularize: learned mode needs weights")
    x = volume.values
    enc0 = relu(conv3d(x, weights["reg.enc0.weight"], weights["reg.enc0.bias"]))
    enc1 = relu(conv3d(enc0, weights["reg.enc1.weight"], weights["reg.enc1.bias"], stride=2))
    enc2 = relu(conv3d(enc1, weights["reg.enc2.weight"], weights["reg.enc2.bias"]))
    up = _match_spatial(trilinear_upsample_x2(enc2), enc0.shape[1:])
    dec = conv3d(up, weights["reg.dec.weight"], weights["reg.dec.bias"])
    mid = relu((dec.astype(_F64) + enc0.astype(_F64)).astype(_F32))
    logits = conv3d(mid, weights["reg.out.weight"], weights["reg.out.bias"])[0]
    return logits, mid


def to_probability(logits: np.ndarray, temperature: float = 1.0) -> ProbabilityVolume:
    """Softmax along the depth axis with a temperature (default 1)."""
    if temperature <= 0:
        raise ValueError(f"to_probability: temperature {temperature} must be positive")
    scaled = np.asarray(logits, dtype=_F64) / temperature
    return ProbabilityVolume(softmax_axis(scaled, axis=0))


def regress_depth(prob: ProbabilityVolume, hypotheses: DepthHypotheses, valid: np.ndarray | None = None) -> DepthMap:
    """Probability-weighted expectation over the hypotheses (softargmax)."""
    p = prob.values.astype(_F64)
    h = hypotheses.values.astype(_F64)
    if not hypotheses.per_pixel:
        h = h[:, None, None]
    if p.shape[0] != h.shape[0]:
        raise ShapeError(f"regress_depth: {p.shape[0]} probability slices vs {h.shape[0]} hypotheses")
    values = np.sum(p * h, axis=0)
    return DepthMap(values.astype(_F32), valid)


def continuous_hypothesis_index(hypotheses: DepthHypotheses, depth_values: np.ndarray) -> np.ndarray:
    """Fractional index of each depth inside the hypothesis ladder, clamped."""
    h = hypotheses.values.astype(_F64)
    d = np.asarray(depth_values, dtype=_F64)
    if not hypotheses.per_pixel:
        h = h[:, None, None] * np.ones((1,) + d.shape)
    k = np.clip(np.sum(d[None] >= h, axis=0) - 1, 0, hypotheses.count - 2).astype(np.int64)
    h_k = np.take_along_axis(h, k[None], axis=0)[0]
    h_k1 = np.take_along_axis(h, (k + 1)[None], axis=0)[0]
    frac = (d - h_k) / (h_k1 - h_k)
    return np.clip(k + frac, 0.0, hypotheses.count - 1.0)


def sample_voxel_features(
    feature_volume: np.ndarray, hypotheses: DepthHypotheses, depth: DepthMap
) -> np.ndarray:
    """Interpolate an (F, D, H, W) volume along depth at the regressed map.

    Returns pixel-major (H*W, F) features; depths outside the ladder clamp
    to the end bins.
    """
    f, d, h, w = feature_volume.shape
    if depth.shape != (h, w):
        raise ShapeError(f"sample_voxel_features: depth shape {depth.shape} != {(h, w)}")
    z = continuous_hypothesis_index(hypotheses, depth.values)
    k = np.clip(np.floor(z).astype(np.int64), 0, d - 2)
    frac = z - k
    iy, ix = np.mgrid[0:h, 0:w]
    vol = feature_volume.astype(_F64)
    lo = vol[:, k, iy, ix]
    hi = vol[:, k + 1, iy, ix]
    out = lo * (1.0 - frac)[None] + hi * frac[None]
    return np.moveaxis(out, 0, 2).reshape(h * w, f).astype(_F32)


def sample_voxel_features_bypass(volume: CostVolume, depth: DepthMap, bins: int = 8) -> np.ndarray:
    """Weight-free voxel features: a ``bins``-slice window of the negated
    channel-mean cost centered on the regressed depth, (H*W, bins).
    """
    d = volume.values.shape[1]
    if d < bins:
        raise ShapeError(f"sample_voxel_features_bypass: {d} hypotheses < window of {bins}")
    ncost = -volume.values.astype(_F64).mean(axis=0)
    z = continuous_hypothesis_index(volume.hypotheses, depth.values)
    start = np.clip(np.floor(z).astype(np.int64) - (bins // 2 - 1), 0, d - bins)
    idx = start[None] + np.arange(bins).reshape(-1, 1, 1)
    window = np.take_along_axis(ncost, idx, axis=0)
    h, w = depth.shape
    return np.moveaxis(window, 0, 2).reshape(h * w, bins).astype(_F32)
