"""Analytic test scenes: textured Lambertian geometry with exact depth.

Scenes are rendered by intersecting per-pixel rays with analytic geometry
(fronto-parallel planes or a sphere over a backdrop) and shading with a
smooth procedural value-noise texture, so every view comes with exact
ground-truth depth. Everything is deterministic under the seed.
"""

from __future__ import annotations

import numpy as np

from .cameras import DepthMap, PinholeCamera
from .scene import SceneBundle, SceneView

_F32 = np.float32
_F64 = np.float64

SCENE_KINDS = ("plane", "two-plane", "textured-sphere")

# Source camera offsets (units of the baseline), cycled for any view count.
_OFFSETS = [
    (1.0, 0.15, 0.02),
    (-0.9, 0.35, -0.03),
    (0.25, -1.0, 0.04),
    (-0.55, -0.8, -0.02),
    (0.8, 0.9, 0.0),
    (-1.0, -0.2, 0.03),
]


def _hash_lattice(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Integer lattice to [0, 1) values via 64-bit mixing (splitmix-style)."""
    h = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
    h ^= np.uint64((salt * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xD6E8FEB86659FD93)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x81DCA2F9D0D8B0C3)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(_F64) / float(1 << 53)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int, octaves: int = 3) -> np.ndarray:
    """Smooth pseudo-random field in [0, 1] over continuous coordinates."""
    total = np.zeros(np.broadcast(x, y).shape, dtype=_F64)
    amp_sum = 0.0
    amp = 1.0
    freq = 1.0
    for octave in range(octaves):
        sx = np.asarray(x, dtype=_F64) * freq
        sy = np.asarray(y, dtype=_F64) * freq
        ix = np.floor(sx).astype(np.int64)
        iy = np.floor(sy).astype(np.int64)
        fx = _smoothstep(sx - ix)
        fy = _smoothstep(sy - iy)
        salt = (seed * 1013 + octave) & 0x7FFFFFFF
        v00 = _hash_lattice(ix, iy, salt)
        v10 = _hash_lattice(ix + 1, iy, salt)
        v01 = _hash_lattice(ix, iy + 1, salt)
        v11 = _hash_lattice(ix + 1, iy + 1, salt)
        top = v00 * (1.0 - fx) + v10 * fx
        bot = v01 * (1.0 - fx) + v11 * fx
        total += amp * (top * (1.0 - fy) + bot * fy)
        amp_sum += amp
        amp *= 0.5
        freq *= 2.0
    return total / amp_sum


def _texture_rgb(points: np.ndarray, seed: int, scale: float, lo: float = 0.15, hi: float = 0.85) -> np.ndarray:
    """RGB texture over 3D surface points, (..., 3) -> (3, ...)."""
    u = (points[..., 0] + 0.37 * points[..., 2]) * scale
    v = (points[..., 1] - 0.23 * points[..., 2]) * scale
    channels = [value_noise(u, v, seed + 11 * c) for c in range(3)]
    return lo + (hi - lo) * np.stack(channels)


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` looking at
    ``target``; image x right, image y down."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    world_down = np.array([0.0, 1.0, 0.0])
    right = np.cross(world_down, forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _camera_rig(n_views: int, resolution: tuple[int, int], baseline: float, focus_depth: float, depth_range):
    h, w = resolution
    focal = 1.05 * w
    intr = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])
    look_target = np.array([0.0, 0.0, focus_depth])
    positions = [np.zeros(3)]  # view 0 is the target camera
    for i in range(n_views):
        off = _OFFSETS[i % len(_OFFSETS)]
        scale = 1.0 + 0.15 * (i // len(_OFFSETS))
        positions.append(np.array([off[0] * baseline * scale, off[1] * baseline * scale, off[2] * baseline]))
    cams = []
    for pos in positions:
        rot = _look_at(pos, look_target) if np.linalg.norm(pos) > 0 else np.eye(3)
        cams.append(
            PinholeCamera(
                intrinsics=intr,
                rotation=rot,
                translation=-rot @ pos,
                width=w,
                height=h,
                depth_min=depth_range[0],
                depth_max=depth_range[1],
            )
        )
    return cams


def _render_view(camera: PinholeCamera, kind: str, seed: int, params: dict):
    grid = camera.pixel_centers()
    homo = np.stack([grid[0], grid[1], np.ones_like(grid[0])])
    local = np.einsum("ij,jhw->ihw", np.linalg.inv(camera.intrinsics), homo, optimize=False)
    dirs = np.einsum("ji,jhw->ihw", camera.rotation, local, optimize=False)
    origin = camera.center()

    if kind == "plane":
        t = (params["depth"] - origin[2]) / dirs[2]
    elif kind == "two-plane":
        t_near = (params["depth_near"] - origin[2]) / dirs[2]
        x_at_near = origin[0] + t_near * dirs[0]
        plane_z = np.where(x_at_near >= params["split_x"], params["depth_far"], params["depth_near"])
        t = (plane_z - origin[2]) / dirs[2]
    elif kind == "textured-sphere":
        center = np.array([0.0, 0.0, params["depth"]])
        radius = params["radius"]
        oc = origin - center
        a = np.einsum("ihw,ihw->hw", dirs, dirs, optimize=False)
        b = 2.0 * np.einsum("i,ihw->hw", oc, dirs, optimize=False)
        c = float(oc @ oc) - radius * radius
        disc = b * b - 4.0 * a * c
        hit = disc > 0
        t_sphere = np.where(hit, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a), np.inf)
        t_back = (params["backdrop"] - origin[2]) / dirs[2]
        t = np.where(hit & (t_sphere > 0) & (t_sphere < t_back), t_sphere, t_back)
    else:
        raise ValueError(f"unknown scene kind {kind!r}")

    points = origin.reshape(3, 1, 1) + t[None] * dirs
    depth = t * local[2]  # camera-frame z of the hit point
    rgb = _texture_rgb(np.moveaxis(points, 0, 2), seed, params["texture_scale"])
    return rgb.astype(_F32), depth.astype(_F32)


def _scene_params(kind: str) -> dict:
    return {
        "plane": {"depth": 5.0, "texture_scale": 1.1},
        "two-plane": {"depth_near": 4.0, "depth_far": 6.5, "split_x": 0.2, "texture_scale": 1.1},
        "textured-sphere": {"depth": 5.0, "radius": 1.6, "backdrop": 7.5, "texture_scale": 1.1},
    }[kind]


def generate_scene_views(
    kind: str,
    n_views: int,
    resolution: tuple[int, int] = (128, 160),
    seed: int = 0,
    baseline: float = 0.5,
) -> list:
    """Render ``n_views`` source views plus the target (index 0), each with
    exact depth. ``resolution`` is (height, width)."""
    if kind not in SCENE_KINDS:
        raise ValueError(f"generate_scene_views: unknown kind {kind!r} (want one of {SCENE_KINDS})")
    if n_views < 2:
        raise ValueError("generate_scene_views: need at least 2 source views")
    params = _scene_params(kind)
    cams = _camera_rig(n_views, resolution, baseline, focus_depth=5.0, depth_range=(2.5, 10.0))
    views = []
    for cam in cams:
        image, depth = _render_view(cam, kind, seed, params)
        views.append(SceneView(image=image, camera=cam, gt_depth=depth))
    return views


def generate_synthetic_scene(
    kind: str,
    n_views: int,
    resolution: tuple[int, int] = (128, 160),
    seed: int = 0,
    baseline: float = 0.5,
) -> SceneBundle:
    """Bundle of N posed sources plus a target carrying ground-truth image
    and depth."""
    views = generate_scene_views(kind, n_views, resolution, seed, baseline)
    target, sources = views[0], views[1:]
    return SceneBundle(
        source_images=[v.image for v in sources],
        source_cameras=[v.camera for v in sources],
        target_camera=target.camera,
        target_image=target.image,
        target_depth=DepthMap(target.gt_depth, None),
    )
