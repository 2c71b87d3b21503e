"""Per-pixel multi-view descriptors and cross-view attention.

Each target pixel is lifted to its regressed depth and observed from every
source view, producing one token per view: sampled feature channels, sampled
RGB, and four ray-direction channels. A kernel-size-1 encoder-decoder over
the view axis pools the tokens into a compact per-pixel feature, which is
concatenated with voxel features and used as the single query of a
scaled-dot-product attention over the view tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cameras import DepthMap, PinholeCamera, backproject_depth, ray_direction_features
from .errors import ShapeError
from .kernels import SeededRng, bilinear_sample, relu, softmax_axis

_F32 = np.float32
_F64 = np.float64

RAY_CHANNELS = 4
RGB_CHANNELS = 3
AGGREGATED_WIDTH = 16
VOXEL_WIDTH = 8
COMBINED_WIDTH = AGGREGATED_WIDTH + VOXEL_WIDTH


@dataclass
class PerViewPixelFeatures:
    """(H*W, N, C+7) tokens: [C feature | 3 RGB | 4 ray] per view, plus a
    per-token validity mask."""

    values: np.ndarray
    valid: np.ndarray  # (H*W, N) bool

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError(f"PerViewPixelFeatures: rank {self.values.ndim} != 3")
        if self.valid.shape != self.values.shape[:2]:
            raise ShapeError(
                f"PerViewPixelFeatures: mask shape {self.valid.shape} != {self.values.shape[:2]}"
            )

    @property
    def n_views(self) -> int:
        return self.values.shape[1]

    @property
    def feature_channels(self) -> int:
        return self.values.shape[2] - RGB_CHANNELS - RAY_CHANNELS


def assemble_view_features(
    tgt_cam: PinholeCamera,
    src_cams: Sequence[PinholeCamera],
    src_features: Sequence[np.ndarray],
    src_images: Sequence[np.ndarray],
    depth: DepthMap,
) -> PerViewPixelFeatures:
    """Sample every source view at the back-projected regressed depth.

    ``tgt_cam`` is at the working (stage) resolution; ``src_cams`` are the
    full image-resolution cameras, and feature maps may be at any integer
    downscale of them. Out-of-view samples are zero with a cleared mask.
    """
    if len(src_cams) != len(src_features) or len(src_cams) != len(src_images):
        raise ShapeError(
            f"assemble_view_features: {len(src_cams)} cameras, {len(src_features)} features, {len(src_images)} images"
        )
    h, w = depth.shape
    if (h, w) != (tgt_cam.height, tgt_cam.width):
        raise ShapeError(f"assemble_view_features: depth {depth.shape} != target camera {(tgt_cam.height, tgt_cam.width)}")
    points = backproject_depth(depth, tgt_cam)
    c = src_features[0].shape[0]

    tokens = []
    masks = []
    for cam, feat, img in zip(src_cams, src_features, src_images):
        if feat.shape[0] != c:
            raise ShapeError(f"assemble_view_features: feature channel axis 0 varies across views ({feat.shape[0]} vs {c})")
        scale = feat.shape[2] / cam.width
        feat_cam = cam.scaled(scale) if scale != 1.0 else cam
        uv, d_src = feat_cam.project(points)
        front = d_src > 0
        coords = np.stack([uv[..., 0] - 0.5, uv[..., 1] - 0.5])
        coords = np.where(front[None], coords, -1e9)
        f_s, m_f = bilinear_sample(feat, coords, return_mask=True)

        uv_img, _ = cam.project(points)
        coords_img = np.stack([uv_img[..., 0] - 0.5, uv_img[..., 1] - 0.5])
        coords_img = np.where(front[None], coords_img, -1e9)
        rgb, m_rgb = bilinear_sample(img, coords_img, return_mask=True)

        rays = ray_direction_features(tgt_cam, cam, points)
        token = np.concatenate([f_s, rgb, rays], axis=0)  # (C+7, H, W)
        tokens.append(np.moveaxis(token, 0, 2).reshape(h * w, -1))
        masks.append((m_f & m_rgb & front).reshape(h * w))

    values = np.stack(tokens, axis=1).astype(_F32)
    valid = np.stack(masks, axis=1)
    # Zero the sampled channels of invalid tokens; ray channels stay (pure geometry).
    values[:, :, : c + RGB_CHANNELS][~valid] = 0.0
    return PerViewPixelFeatures(values=values, valid=valid)


def init_view_aggregator_weights(rng: SeededRng, in_channels: int, width: int = AGGREGATED_WIDTH) -> dict[str, np.ndarray]:
    store = {
        "cda.unet.enc.weight": rng.uniform_init("cda.unet.enc.weight", (width, in_channels), in_channels),
        "cda.unet.enc.bias": np.zeros(width, dtype=_F32),
        "cda.unet.dec.weight": rng.uniform_init("cda.unet.dec.weight", (width, width), width),
        "cda.unet.dec.bias": np.zeros(width, dtype=_F32),
        "cda.unet.proj.weight": rng.uniform_init("cda.unet.proj.weight", (width, width), width),
        "cda.unet.proj.bias": np.zeros(width, dtype=_F32),
    }
    return store


def view_aggregate(tokens: PerViewPixelFeatures, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Pool the view axis into a compact (H*W, 16) feature.

    Two kernel-size-1 stages per token, a mean over views, then a linear
    projection. Kernel size 1 makes the result exactly invariant to view
    permutation.
    """
    if tokens.n_views < 2:
        raise ShapeError(f"view_aggregate: need at least 2 views, got {tokens.n_views}")
    x = tokens.values.astype(_F64)
    w1, b1 = weights["cda.unet.enc.weight"], weights["cda.unet.enc.bias"]
    w2, b2 = weights["cda.unet.dec.weight"], weights["cda.unet.dec.bias"]
    w3, b3 = weights["cda.unet.proj.weight"], weights["cda.unet.proj.bias"]
    if w1.shape[1] != x.shape[2]:
        raise ShapeError(f"view_aggregate: token width {x.shape[2]} != encoder input {w1.shape[1]}")
    h = np.maximum(np.einsum("pnc,oc->pno", x, w1.astype(_F64), optimize=False) + b1.astype(_F64), 0.0)
    h = np.maximum(np.einsum("pnc,oc->pno", h, w2.astype(_F64), optimize=False) + b2.astype(_F64), 0.0)
    pooled = h.mean(axis=1)
    out = np.einsum("pc,oc->po", pooled, w3.astype(_F64), optimize=False) + b3.astype(_F64)
    return out.astype(_F32)


def fuse_combined(aggregated: np.ndarray, voxel: np.ndarray) -> np.ndarray:
    """Concatenate the pooled view feature (first) with the voxel feature."""
    if aggregated.shape[0] != voxel.shape[0]:
        raise ShapeError(f"fuse_combined: row counts differ, {aggregated.shape[0]} vs {voxel.shape[0]}")
    if aggregated.shape[1] != AGGREGATED_WIDTH:
        raise ShapeError(f"fuse_combined: aggregated width {aggregated.shape[1]} != {AGGREGATED_WIDTH}")
    if voxel.shape[1] != VOXEL_WIDTH:
        raise ShapeError(f"fuse_combined: voxel width {voxel.shape[1]} != {VOXEL_WIDTH}")
    return np.concatenate([aggregated, voxel], axis=1).astype(_F32)


def init_cross_view_attention_weights(
    rng: SeededRng,
    kv_dim: int,
    query_dim: int = COMBINED_WIDTH,
    attn_dim: int = 16,
    out_dim: int = COMBINED_WIDTH,
) -> dict[str, np.ndarray]:
    store = {
        "cda.attn.query.weight": rng.uniform_init("cda.attn.query.weight", (attn_dim, query_dim), query_dim),
        "cda.attn.key.weight": rng.uniform_init("cda.attn.key.weight", (attn_dim, kv_dim), kv_dim),
        "cda.attn.value.weight": rng.uniform_init("cda.attn.value.weight", (attn_dim, kv_dim), kv_dim),
        "cda.attn.out.weight": rng.uniform_init("cda.attn.out.weight", (out_dim, attn_dim), attn_dim),
        "cda.attn.out.bias": np.zeros(out_dim, dtype=_F32),
        "cda.attn.res.weight": rng.uniform_init("cda.attn.res.weight", (out_dim, query_dim), query_dim),
    }
    return store


def cross_view_attention(
    combined: np.ndarray,
    tokens: np.ndarray,
    weights: Mapping[str, np.ndarray],
    return_weights: bool = False,
):
    """Single-head attention: the combined feature queries the view tokens.

    ``combined`` is (H*W, Dq); ``tokens`` is (H*W, N, C_kv). Per pixel the
    query attends over its N tokens with softmax(q.k / sqrt(d)); the pooled
    value is projected and added to a linear projection of the query input.
    """
    if tokens.ndim != 3:
        raise ShapeError(f"cross_view_attention: tokens rank {tokens.ndim} != 3")
    if tokens.shape[1] == 0:
        raise ShapeError("cross_view_attention: zero view tokens")
    if combined.shape[0] != tokens.shape[0]:
        raise ShapeError(f"cross_view_attention: row counts differ, {combined.shape[0]} vs {tokens.shape[0]}")
    wq = weights["cda.attn.query.weight"].astype(_F64)
    wk = weights["cda.attn.key.weight"].astype(_F64)
    wv = weights["cda.attn.value.weight"].astype(_F64)
    wo = weights["cda.attn.out.weight"].astype(_F64)
    bo = weights["cda.attn.out.bias"].astype(_F64)
    wr = weights["cda.attn.res.weight"].astype(_F64)
    x = combined.astype(_F64)
    kv = tokens.astype(_F64)

    q = np.einsum("pc,dc->pd", x, wq, optimize=False)
    k = np.einsum("pnc,dc->pnd", kv, wk, optimize=False)
    v = np.einsum("pnc,dc->pnd", kv, wv, optimize=False)
    scores = np.einsum("pd,pnd->pn", q, k, optimize=False) / np.sqrt(q.shape[1])
    attn = softmax_axis(scores, axis=1).astype(_F64)
    pooled = np.einsum("pn,pnd->pd", attn, v, optimize=False)
    out = np.einsum("pd,od->po", pooled, wo, optimize=False) + bo
    out = out + np.einsum("pc,oc->po", x, wr, optimize=False)
    out32 = out.astype(_F32)
    if return_weights:
        return out32, attn.astype(_F32)
    return out32
