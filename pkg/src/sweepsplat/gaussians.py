"""Gaussian attribute decoding and cross-scale opacity fusion.

Four dedicated MLP heads map per-pixel features to scale (softplus),
rotation (normalized quaternion), opacity (sigmoid), and color (sigmoid);
centers come from back-projected depth. A fifth head compares the coarse and
fine stage features and emits a per-Gaussian opacity weight in (0, 2), the
only attribute refined across scales.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import FormatError, ShapeError
from .kernels import MlpSpec, SeededRng, bilinear_upsample_x2, mlp_forward
from .weights_io import init_mlp, mlp_layers

_F32 = np.float32
_F64 = np.float64

GC_MAGIC = b"GC01"
OPACITY_EPS = 1e-6
SCALE_MIN = 1e-5
QUAT_NORM_TOL = 1e-5


@dataclass
class GaussianCloud:
    """Pixel-aligned Gaussians: centers, scales, unit quaternions, opacities
    in (0, 1), colors in [0, 1]."""

    centers: np.ndarray  # (M, 3)
    scales: np.ndarray  # (M, 3) positive
    rotations: np.ndarray  # (M, 4) unit quaternions, w first
    opacities: np.ndarray  # (M,)
    colors: np.ndarray  # (M, 3)

    def __post_init__(self):
        m = self.centers.shape[0]
        expected = {
            "centers": (m, 3),
            "scales": (m, 3),
            "rotations": (m, 4),
            "opacities": (m,),
            "colors": (m, 3),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"GaussianCloud: {name} shape {arr.shape} != {shape}")
            object.__setattr__(self, name, np.asarray(arr, dtype=_F32))

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def validate(self) -> None:
        for name in ("centers", "scales", "rotations", "opacities", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"GaussianCloud: non-finite {name}")
        norms = np.linalg.norm(self.rotations.astype(_F64), axis=1)
        if np.max(np.abs(norms - 1.0)) >= QUAT_NORM_TOL:
            raise ValueError("GaussianCloud: rotations are not unit quaternions")
        if np.any(self.scales <= 0):
            raise ValueError("GaussianCloud: non-positive scales")
        if np.any(self.opacities <= 0) or np.any(self.opacities >= 1):
            raise ValueError("GaussianCloud: opacities outside (0, 1)")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValueError("GaussianCloud: colors outside [0, 1]")


def head_spec(feature_dim: int, out_dim: int, activation: str, hidden: int = 32) -> MlpSpec:
    return MlpSpec(widths=(feature_dim, hidden, out_dim), output_activation=activation)


def init_decode_weights(rng: SeededRng, feature_dim: int, hidden: int = 32) -> dict[str, np.ndarray]:
    """Seeded heads; the rotation bias starts at the identity quaternion so
    untrained heads still emit normalizable rotations."""
    store: dict[str, np.ndarray] = {}
    store.update(init_mlp(rng, "heads.scale", (feature_dim, hidden, 3)))
    store.update(init_mlp(rng, "heads.rotation", (feature_dim, hidden, 4)))
    store.update(init_mlp(rng, "heads.opacity", (feature_dim, hidden, 1)))
    store.update(init_mlp(rng, "heads.color", (feature_dim, hidden, 3)))
    store["heads.rotation.l1.bias"] = np.array([1.0, 0.0, 0.0, 0.0], dtype=_F32)
    return store


def canonicalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Flip signs so the first nonzero component is positive (q and -q are
    the same rotation; this makes decoding deterministic)."""
    q64 = q.astype(_F64)
    idx = np.argmax(np.abs(q64) > 0, axis=1)
    lead = np.take_along_axis(q64, idx[:, None], axis=1)[:, 0]
    sign = np.where(lead < 0, -1.0, 1.0)
    return (q64 * sign[:, None]).astype(_F32)


def decode_params(
    features: np.ndarray,
    centers: np.ndarray,
    weights: Mapping[str, np.ndarray],
    scale_max: float,
    hidden: int = 32,
) -> GaussianCloud:
    """Decode per-pixel features (M, Dg) into a GaussianCloud.

    Scales clamp to [1e-5, scale_max] so random weights cannot emit
    degenerate or scene-engulfing Gaussians.
    """
    if features.ndim != 2:
        raise ShapeError(f"decode_params: features rank {features.ndim} != 2")
    pts = np.asarray(centers, dtype=_F32).reshape(-1, 3)
    if pts.shape[0] != features.shape[0]:
        raise ShapeError(f"decode_params: {features.shape[0]} feature rows vs {pts.shape[0]} centers")
    dg = features.shape[1]
    scales = mlp_forward(head_spec(dg, 3, "softplus", hidden), mlp_layers(weights, "heads.scale"), features)
    scales = np.clip(scales, SCALE_MIN, scale_max)
    raw_rot = mlp_forward(head_spec(dg, 4, "none", hidden), mlp_layers(weights, "heads.rotation"), features)
    norms = np.linalg.norm(raw_rot.astype(_F64), axis=1)
    if np.any(norms == 0.0):
        raise ValueError("decode_params: rotation head emitted a zero vector")
    rot = canonicalize_quaternions((raw_rot.astype(_F64) / norms[:, None]).astype(_F32))
    opacity = mlp_forward(head_spec(dg, 1, "sigmoid", hidden), mlp_layers(weights, "heads.opacity"), features)[:, 0]
    color = mlp_forward(head_spec(dg, 3, "sigmoid", hidden), mlp_layers(weights, "heads.color"), features)
    return GaussianCloud(centers=pts, scales=scales, rotations=rot, opacities=opacity, colors=color)


def init_fusion_weights(
    rng: SeededRng, feature_dim: int, hidden: int = 32, zero_final: bool = False
) -> dict[str, np.ndarray]:
    """Weights for the cross-scale opacity head over concatenated features.

    ``zero_final`` zeroes the last layer, which makes the modulation the
    identity (weight 1 everywhere)."""
    store = init_mlp(rng, "fusion.weight_mlp", (2 * feature_dim, hidden, 1))
    if zero_final:
        store["fusion.weight_mlp.l1.weight"] = np.zeros_like(store["fusion.weight_mlp.l1.weight"])
        store["fusion.weight_mlp.l1.bias"] = np.zeros_like(store["fusion.weight_mlp.l1.bias"])
    return store


def cross_scale_weights(
    coarse_features: np.ndarray,
    fine_features: np.ndarray,
    coarse_shape: tuple[int, int],
    weights: Mapping[str, np.ndarray],
    hidden: int = 32,
) -> np.ndarray:
    """Opacity modulation weights in (0, 2), one per fine-stage Gaussian.

    The coarse feature grid is upsampled to the fine grid, concatenated
    channel-wise (upsampled coarse first), and passed through the weight
    head with a doubled sigmoid, so zero logits mean "leave opacity alone".
    """
    h, w = coarse_shape
    if coarse_features.shape[0] != h * w:
        raise ShapeError(f"cross_scale_weights: {coarse_features.shape[0]} coarse rows != {h}x{w}")
    if fine_features.shape[0] != 4 * h * w:
        raise ShapeError(
            f"cross_scale_weights: fine grid must double the coarse grid, got {fine_features.shape[0]} rows vs {h}x{w}"
        )
    if coarse_features.shape[1] != fine_features.shape[1]:
        raise ShapeError(
            f"cross_scale_weights: feature widths differ, {coarse_features.shape[1]} vs {fine_features.shape[1]}"
        )
    dg = coarse_features.shape[1]
    grid = np.moveaxis(coarse_features.reshape(h, w, dg), 2, 0)
    up = bilinear_upsample_x2(grid)
    up_rows = np.moveaxis(up, 0, 2).reshape(4 * h * w, dg)
    cat = np.concatenate([up_rows, fine_features], axis=1)
    spec = MlpSpec(widths=(2 * dg, hidden, 1), output_activation="scaled_sigmoid2")
    return mlp_forward(spec, mlp_layers(weights, "fusion.weight_mlp"), cat)


def apply_modulation(cloud: GaussianCloud, modulation: np.ndarray) -> GaussianCloud:
    """Scale opacities by the modulation weight; every other attribute is
    returned untouched (same arrays). The product clamps to
    [1e-6, 1 - 1e-6] so compositing stays finite."""
    w = np.asarray(modulation, dtype=_F32).reshape(-1)
    if w.shape[0] != cloud.count:
        raise ShapeError(f"apply_modulation: {w.shape[0]} weights vs {cloud.count} Gaussians")
    new_alpha = np.clip(cloud.opacities.astype(_F64) * w.astype(_F64), OPACITY_EPS, 1.0 - OPACITY_EPS)
    return replace(cloud, opacities=new_alpha.astype(_F32))


def save_gc01(path, cloud: GaussianCloud) -> None:
    """Binary cloud export: magic, u32 count, then per-Gaussian 14 float32
    (center 3, scale 3, rotation 4, opacity 1, color 3), little-endian."""
    records = np.concatenate(
        [cloud.centers, cloud.scales, cloud.rotations, cloud.opacities[:, None], cloud.colors], axis=1
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(GC_MAGIC)
        f.write(struct.pack("<I", cloud.count))
        f.write(np.ascontiguousarray(records).tobytes())


def load_gc01(path) -> GaussianCloud:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != GC_MAGIC:
        raise FormatError(f"{path}: not a GC01 cloud file")
    (count,) = struct.unpack("<I", data[4:8])
    need = 8 + count * 14 * 4
    if len(data) < need:
        raise FormatError(f"{path}: truncated cloud payload")
    rec = np.frombuffer(data[8:need], dtype="<f4").reshape(count, 14).astype(_F32)
    return GaussianCloud(
        centers=rec[:, 0:3],
        scales=rec[:, 3:6],
        rotations=rec[:, 6:10],
        opacities=rec[:, 10],
        colors=rec[:, 11:14],
    )


def save_ply_text(path, cloud: GaussianCloud) -> None:
    """Human-readable point export for quick inspection."""
    props = [
        "x", "y", "z",
        "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
        "opacity",
        "red", "green", "blue",
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.count}\n")
        for p in props:
            f.write(f"property float {p}\n")
        f.write("end_header\n")
        rec = np.concatenate(
            [cloud.centers, cloud.scales, cloud.rotations, cloud.opacities[:, None], cloud.colors], axis=1
        )
        for row in rec:
            f.write(" ".join(f"{v:.7g}" for v in row) + "\n")
