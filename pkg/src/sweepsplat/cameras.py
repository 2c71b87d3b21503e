"""Pinhole cameras, plane-induced homographies, and depth-map geometry.

Conventions, fixed once and shared by every oracle:

- world-to-camera transform ``x_cam = R @ X + t``; the camera center is
  ``-R.T @ t``.
- continuous image coordinates (u, v): u along columns, v along rows, with
  the center of pixel (row i, col j) at (j + 0.5, i + 0.5). Array sampling
  through :mod:`sweepsplat.kernels` uses lattice units, so image coordinates
  convert by subtracting 0.5.
- depth is the camera-frame z coordinate, positive in front of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, ShapeError
from .kernels import bilinear_sample

_F32 = np.float32
_F64 = np.float64

ROTATION_TOL = 1e-5


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    intrinsics: np.ndarray  # (3, 3) upper-triangular, positive diagonal
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int
    depth_min: float
    depth_max: float

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=_F64)
        r = np.asarray(self.rotation, dtype=_F64)
        t = np.asarray(self.translation, dtype=_F64).reshape(3)
        if k.shape != (3, 3):
            raise CameraError(f"intrinsics shape {k.shape} != (3, 3)")
        if r.shape != (3, 3):
            raise CameraError(f"rotation shape {r.shape} != (3, 3)")
        if np.any(np.abs(np.tril(k, -1)) > 0) or np.any(np.diag(k)[:2] <= 0) or k[2, 2] <= 0:
            raise CameraError("intrinsics must be upper-triangular with positive diagonal")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL:
            raise CameraError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise CameraError("rotation determinant is not +1")
        if not (0.0 < self.depth_min < self.depth_max):
            raise CameraError(f"invalid depth range [{self.depth_min}, {self.depth_max}]")
        if self.width <= 0 or self.height <= 0:
            raise CameraError("image extents must be positive")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, factor: float) -> "PinholeCamera":
        """Camera for an image resampled by ``factor`` (e.g. 0.25 or 0.5)."""
        w = self.width * factor
        h = self.height * factor
        if abs(w - round(w)) > 1e-9 or abs(h - round(h)) > 1e-9:
            raise CameraError(f"cannot scale {self.width}x{self.height} by {factor}: non-integral result")
        k = self.intrinsics.copy()
        k[0, :] *= factor
        k[1, :] *= factor
        return replace(self, intrinsics=k, width=int(round(w)), height=int(round(h)))

    def pixel_centers(self) -> np.ndarray:
        """(2, H, W) continuous image coordinates of every pixel center."""
        u = np.arange(self.width, dtype=_F64) + 0.5
        v = np.arange(self.height, dtype=_F64) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv])

    def project(self, points: np.ndarray):
        """Project world points (..., 3) to ((..., 2) image coords, (...,) depth)."""
        pts = np.asarray(points, dtype=_F64)
        cam = pts @ self.rotation.T + self.translation
        depth = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = cam @ self.intrinsics.T
            uv = proj[..., :2] / proj[..., 2:3]
        return uv, depth


@dataclass
class DepthMap:
    """Per-pixel depth (scene units) with a validity mask."""

    values: np.ndarray  # (H, W) float32
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=_F32)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2:
            raise ShapeError(f"DepthMap: values rank {self.values.ndim} != 2")
        if self.valid.shape != self.values.shape:
            raise ShapeError(f"DepthMap: mask shape {self.valid.shape} != values shape {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class DepthHypotheses:
    """Ordered depth candidates: global (D,) or per-pixel (D, H, W)."""

    values: np.ndarray
    stage: str  # "coarse" | "fine"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=_F32)
        if self.values.ndim not in (1, 3):
            raise ShapeError(f"DepthHypotheses: rank {self.values.ndim} not in (1, 3)")
        if self.count < 2:
            raise ValueError(f"DepthHypotheses: need at least 2 depths, got {self.count}")
        if np.any(np.diff(self.values.astype(_F64), axis=0) <= 0):
            raise ValueError("DepthHypotheses: values must be strictly increasing along the depth axis")

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def per_pixel(self) -> bool:
        return self.values.ndim == 3

    def mean_spacing(self) -> float:
        return float(np.mean(np.diff(self.values.astype(_F64), axis=0)))


def sample_depth_hypotheses(
    camera: PinholeCamera,
    count: int,
    mode: str = "uniform-depth",
    center: DepthMap | None = None,
    radius=None,
) -> DepthHypotheses:
    """Depth candidates for plane sweeping.

    Without ``center`` the sweep spans the camera's full depth range
    (coarse stage). With ``center`` it spans ``center +- radius`` per pixel,
    clamped to the camera range (fine stage).
    """
    if count < 2:
        raise ValueError(f"sample_depth_hypotheses: count {count} < 2")
    if mode not in ("uniform-depth", "uniform-inverse-depth"):
        raise ValueError(f"sample_depth_hypotheses: unknown mode {mode!r}")
    lo, hi = camera.depth_min, camera.depth_max

    if center is None:
        if mode == "uniform-depth":
            values = np.linspace(lo, hi, count, dtype=_F64)
        else:
            values = 1.0 / np.linspace(1.0 / lo, 1.0 / hi, count, dtype=_F64)
        return DepthHypotheses(values, "coarse")

    if radius is None:
        raise ValueError("sample_depth_hypotheses: fine stage needs a radius")
    c = center.values.astype(_F64)
    r = np.broadcast_to(np.asarray(radius, dtype=_F64), c.shape)
    low = np.clip(c - r, lo, hi)
    high = np.clip(c + r, lo, hi)
    # Keep a nonzero span even when the window clamps onto a range endpoint.
    span = np.maximum(high - low, 1e-6 * (hi - lo))
    high = low + span
    if mode == "uniform-depth":
        steps = np.linspace(0.0, 1.0, count, dtype=_F64).reshape(-1, 1, 1)
        values = low[None] + steps * span[None]
    else:
        inv = 1.0 / low[None] + np.linspace(0.0, 1.0, count, dtype=_F64).reshape(-1, 1, 1) * (
            1.0 / high[None] - 1.0 / low[None]
        )
        values = 1.0 / inv
    return DepthHypotheses(values, "fine")


def homography_for_plane(src: PinholeCamera, tgt: PinholeCamera, depth: float) -> np.ndarray:
    """3x3 map from target image coordinates to source image coordinates
    via the fronto-parallel plane at ``depth`` in the target camera.
    """
    if depth <= 0:
        raise CameraError(f"plane depth {depth} must be positive")
    k_src = src.intrinsics
    k_tgt = tgt.intrinsics
    if abs(np.linalg.det(k_tgt)) < 1e-12 or abs(np.linalg.det(k_src)) < 1e-12:
        raise CameraError("singular intrinsics")
    r_rel = src.rotation @ tgt.rotation.T
    t_rel = src.translation - r_rel @ tgt.translation
    n = np.array([0.0, 0.0, 1.0])
    h = k_src @ (r_rel + np.outer(t_rel, n) / depth) @ np.linalg.inv(k_tgt)
    return h


def warp_feature(feature: np.ndarray, h_matrix: np.ndarray, out_size: tuple[int, int]):
    """Resample a (C, H, W) source feature onto a target grid through a
    homography. Returns the warped feature and an in-bounds validity mask.
    """
    out_h, out_w = out_size
    u = np.arange(out_w, dtype=_F64) + 0.5
    v = np.arange(out_h, dtype=_F64) + 0.5
    uu, vv = np.meshgrid(u, v)
    ones = np.ones_like(uu)
    p = np.einsum("ij,jhw->ihw", np.asarray(h_matrix, dtype=_F64), np.stack([uu, vv, ones]), optimize=False)
    w = p[2]
    front = w > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        su = np.where(front, p[0] / w, -1e9)
        sv = np.where(front, p[1] / w, -1e9)
    coords = np.stack([su - 0.5, sv - 0.5])
    warped, mask = bilinear_sample(feature, coords, return_mask=True)
    return warped, mask & front


def backproject_depth(depth, camera: PinholeCamera) -> np.ndarray:
    """Lift per-pixel depths to world points, (H, W, 3)."""
    values = depth.values if isinstance(depth, DepthMap) else np.asarray(depth)
    h, w = values.shape
    if (h, w) != (camera.height, camera.width):
        raise ShapeError(f"backproject_depth: depth {values.shape} != camera {(camera.height, camera.width)}")
    grid = camera.pixel_centers()
    homo = np.stack([grid[0], grid[1], np.ones_like(grid[0])])
    rays = np.einsum("ij,jhw->ihw", np.linalg.inv(camera.intrinsics), homo, optimize=False)
    cam_pts = rays * values.astype(_F64)[None]
    world = np.einsum("ji,jhw->hwi", camera.rotation, cam_pts - camera.translation.reshape(3, 1, 1), optimize=False)
    return world


def backproject_centers_rows(depth, camera: PinholeCamera) -> np.ndarray:
    """Back-projected pixel centers flattened pixel-major, (H*W, 3)."""
    return backproject_depth(depth, camera).reshape(-1, 3)


def project_to_view(points: np.ndarray, camera: PinholeCamera):
    """Project (H, W, 3) world points into a view: ((2, H, W) coords, depth, front mask)."""
    uv, depth = camera.project(points)
    coords = np.stack([uv[..., 0], uv[..., 1]])
    return coords, depth, depth > 0


def ray_direction_features(tgt: PinholeCamera, src: PinholeCamera, points: np.ndarray) -> np.ndarray:
    """Per-pixel viewing-ray relation between two cameras, (4, H, W).

    ``points`` is the H x W grid of back-projected pixel-center world points.
    Channels 0-2 hold the unit target ray minus the unit source ray (world
    frame); channel 3 their dot product.
    """
    pts = np.asarray(points, dtype=_F64)
    if pts.ndim != 3 or pts.shape[2] != 3:
        raise ShapeError(f"ray_direction_features: points shape {pts.shape} != (H, W, 3)")

    def unit_rays(cam: PinholeCamera) -> np.ndarray:
        d = pts - cam.center()
        norm = np.linalg.norm(d, axis=2, keepdims=True)
        if np.any(norm == 0.0):
            raise CameraError("ray through the camera center is degenerate")
        return d / norm

    rt = unit_rays(tgt)
    rs = unit_rays(src)
    diff = rt - rs
    dot = np.sum(rt * rs, axis=2)
    return np.concatenate([np.moveaxis(diff, 2, 0), dot[None]], axis=0).astype(_F32)


def read_camera_text(path, width: int | None = None, height: int | None = None) -> PinholeCamera:
    """Parse the plain-text camera format.

    Layout: a line ``extrinsic`` followed by 4 rows of the 4x4 world-to-camera
    matrix, a line ``intrinsic`` followed by 3 rows of the 3x3 matrix, and a
    final ``depth_min depth_max`` line. Whitespace separated decimal floats.

    The file carries no image extents; pass them from the paired image, or
    leave them unset to infer width = 2*cx, height = 2*cy from the principal
    point.
    """
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    try:
        i = tokens.index("extrinsic")
        ext = np.array([float(x) for x in tokens[i + 1 : i + 17]], dtype=_F64).reshape(4, 4)
        j = tokens.index("intrinsic")
        intr = np.array([float(x) for x in tokens[j + 1 : j + 10]], dtype=_F64).reshape(3, 3)
        d_min, d_max = float(tokens[j + 10]), float(tokens[j + 11])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed camera file ({exc})") from exc
    return PinholeCamera(
        intrinsics=intr,
        rotation=ext[:3, :3],
        translation=ext[:3, 3],
        width=int(round(2 * intr[0, 2])) if width is None else width,
        height=int(round(2 * intr[1, 2])) if height is None else height,
        depth_min=d_min,
        depth_max=d_max,
    )


def write_camera_text(path, camera: PinholeCamera) -> None:
    """Inverse of :func:`read_camera_text`; floats round-trip exactly."""
    ext = np.eye(4, dtype=_F64)
    ext[:3, :3] = camera.rotation
    ext[:3, 3] = camera.translation
    lines = ["extrinsic"]
    for row in ext:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("intrinsic")
    for row in camera.intrinsics:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append(f"{camera.depth_min!r} {camera.depth_max!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
