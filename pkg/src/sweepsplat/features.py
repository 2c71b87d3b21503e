"""Two-level feature pyramid with coordinate attention.

The encoder is a small strided conv stack; lateral 1x1 convolutions bring
both levels to the configured feature width. Coordinate attention pools the
fine level along each spatial axis, mixes the pooled profiles with a shared
1D convolution, and modulates the feature map with the resulting per-axis
sigmoid maps before fusing in the upsampled coarse level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ShapeError
from .kernels import SeededRng, bilinear_upsample_x2, conv1d, conv2d, relu, sigmoid

_F32 = np.float32
_F64 = np.float64


@dataclass
class FeaturePyramid:
    """Ordered coarse-to-fine levels; each level doubles H and W."""

    levels: list

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ShapeError(f"FeaturePyramid: need 2 levels, got {len(self.levels)}")
        for i in range(len(self.levels) - 1):
            a, b = self.levels[i], self.levels[i + 1]
            if b.shape[1] != 2 * a.shape[1] or b.shape[2] != 2 * a.shape[2]:
                raise ShapeError(
                    f"FeaturePyramid: level {i + 1} spatial shape {b.shape[1:]} is not double level {i} {a.shape[1:]}"
                )


@dataclass
class AxisAttentionMaps:
    """Per-axis sigmoid attention: a_h is (C, H, 1), a_w is (C, 1, W)."""

    a_h: np.ndarray
    a_w: np.ndarray


def init_feature_weights(
    rng: SeededRng,
    in_channels: int = 3,
    trunk_fine: int = 8,
    trunk_coarse: int = 16,
    out_channels: int = 8,
) -> dict[str, np.ndarray]:
    """Seeded weights for the encoder, laterals, and the attention conv."""
    store: dict[str, np.ndarray] = {}

    def conv(name, c_out, c_in, k):
        store[f"{name}.weight"] = rng.uniform_init(f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        store[f"{name}.bias"] = np.zeros(c_out, dtype=_F32)

    conv("fpn.fine.conv1", trunk_fine, in_channels, 3)
    conv("fpn.fine.conv2", trunk_fine, trunk_fine, 3)
    conv("fpn.coarse.conv1", trunk_coarse, trunk_fine, 3)
    conv("fpn.coarse.conv2", trunk_coarse, trunk_coarse, 3)
    conv("fpn.fine.lateral", out_channels, trunk_fine, 1)
    conv("fpn.coarse.lateral", out_channels, trunk_coarse, 1)
    store["cga.attn.weight"] = rng.uniform_init("cga.attn.weight", (out_channels, out_channels, 3), out_channels * 3)
    store["cga.attn.bias"] = np.zeros(out_channels, dtype=_F32)
    return store


def extract_pyramid(image: np.ndarray, weights: Mapping[str, np.ndarray]) -> FeaturePyramid:
    """Encode a (3, H, W) image into levels at H/4 and H/2 resolution."""
    if image.ndim != 3:
        raise ShapeError(f"extract_pyramid: image rank {image.ndim} != 3")
    h, w = image.shape[1:]
    if h % 4 or w % 4:
        raise ShapeError(f"extract_pyramid: spatial extents {h}x{w} not divisible by 4")
    fine = relu(conv2d(image, weights["fpn.fine.conv1.weight"], weights["fpn.fine.conv1.bias"], stride=2))
    fine = relu(conv2d(fine, weights["fpn.fine.conv2.weight"], weights["fpn.fine.conv2.bias"]))
    coarse = relu(conv2d(fine, weights["fpn.coarse.conv1.weight"], weights["fpn.coarse.conv1.bias"], stride=2))
    coarse = relu(conv2d(coarse, weights["fpn.coarse.conv2.weight"], weights["fpn.coarse.conv2.bias"]))
    lat_c = conv2d(coarse, weights["fpn.coarse.lateral.weight"], weights["fpn.coarse.lateral.bias"])
    lat_f = conv2d(fine, weights["fpn.fine.lateral.weight"], weights["fpn.fine.lateral.bias"])
    return FeaturePyramid([lat_c, lat_f])


def box_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool a (C, H, W) image by an integer factor."""
    c, h, w = image.shape
    if h % factor or w % factor:
        raise ShapeError(f"box_downsample: extents {h}x{w} not divisible by {factor}")
    view = image.reshape(c, h // factor, factor, w // factor, factor).astype(_F64)
    return view.mean(axis=(2, 4)).astype(_F32)


def photometric_pyramid(image: np.ndarray) -> FeaturePyramid:
    """Weight-free RGB pyramid for the photometric pipeline mode."""
    return FeaturePyramid([box_downsample(image, 4), box_downsample(image, 2)])


def coord_pool(feature: np.ndarray):
    """Mean-pool a (C, H, W) map along each axis: (C, H, 1) and (C, 1, W)."""
    if feature.ndim != 3:
        raise ShapeError(f"coord_pool: feature rank {feature.ndim} != 3")
    f = feature.astype(_F64)
    t_h = f.mean(axis=2, keepdims=True).astype(_F32)
    t_w = f.mean(axis=1, keepdims=True).astype(_F32)
    return t_h, t_w


def coord_attention_maps(t_h: np.ndarray, t_w: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> AxisAttentionMaps:
    """Joint 1D convolution over the concatenated axis profiles.

    The width profile is reshaped to (C, W, 1), stacked under the height
    profile to a length H+W sequence, convolved, squashed with a sigmoid,
    and split back into the two axis maps.
    """
    c, h, _ = t_h.shape
    w = t_w.shape[2]
    if t_w.shape[0] != c:
        raise ShapeError(f"coord_attention_maps: channel mismatch {t_h.shape[0]} vs {t_w.shape[0]}")
    if weight.shape[0] != c or weight.shape[1] != c:
        raise ShapeError(f"coord_attention_maps: conv weight {weight.shape} does not map {c} channels to {c}")
    cat = np.concatenate([t_h[:, :, 0], t_w[:, 0, :]], axis=1)  # (C, H + W)
    attn = sigmoid(conv1d(cat, weight, bias))
    return AxisAttentionMaps(a_h=attn[:, :h, None], a_w=attn[:, None, h:])


def coord_modulate(feature: np.ndarray, maps: AxisAttentionMaps) -> np.ndarray:
    """Apply both axis maps multiplicatively: out = a_h * a_w * feature."""
    c, h, w = feature.shape
    if maps.a_h.shape != (c, h, 1):
        raise ShapeError(f"coord_modulate: a_h shape {maps.a_h.shape} != {(c, h, 1)}")
    if maps.a_w.shape != (c, 1, w):
        raise ShapeError(f"coord_modulate: a_w shape {maps.a_w.shape} != {(c, 1, w)}")
    return (maps.a_h.astype(_F64) * maps.a_w.astype(_F64) * feature.astype(_F64)).astype(_F32)


def fuse_levels(coarse: np.ndarray, fine_modulated: np.ndarray) -> np.ndarray:
    """Add the upsampled coarse level to the attention-modulated fine level."""
    if coarse.shape[0] != fine_modulated.shape[0]:
        raise ShapeError(
            f"fuse_levels: channel axis 0 mismatch {coarse.shape[0]} vs {fine_modulated.shape[0]}"
        )
    if fine_modulated.shape[1:] != (2 * coarse.shape[1], 2 * coarse.shape[2]):
        raise ShapeError(
            f"fuse_levels: fine spatial shape {fine_modulated.shape[1:]} is not double coarse {coarse.shape[1:]}"
        )
    up = bilinear_upsample_x2(coarse)
    return (up.astype(_F64) + fine_modulated.astype(_F64)).astype(_F32)


def attend_and_fuse(pyramid: FeaturePyramid, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Full fine-level path: pool, attend, modulate, fuse with coarse."""
    coarse, fine = pyramid.levels
    t_h, t_w = coord_pool(fine)
    maps = coord_attention_maps(t_h, t_w, weights["cga.attn.weight"], weights["cga.attn.bias"])
    return fuse_levels(coarse, coord_modulate(fine, maps))
