"""Scene bundles and the on-disk scene layout.

A scene directory mirrors common multi-view stereo datasets:

    images/NNNN.ppm   posed views (binary P6)
    cams/NNNN.txt     matching cameras (plain-text format)
    gt/depth_NNNN.pfm optional per-view ground-truth depth

View 0 is the conventional target; a bundle picks one view as the target
and the nearest views as sources.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .cameras import DepthMap, PinholeCamera, read_camera_text, write_camera_text
from .errors import FormatError, ShapeError
from .imgio import read_ppm, read_pfm, write_pfm, write_ppm

_F32 = np.float32


@dataclass
class SceneView:
    image: np.ndarray  # (3, H, W) in [0, 1]
    camera: PinholeCamera
    gt_depth: np.ndarray | None = None  # (H, W)


@dataclass
class SceneBundle:
    """N posed source views plus one target camera, optionally with ground
    truth for the target."""

    source_images: list
    source_cameras: list
    target_camera: PinholeCamera
    target_image: np.ndarray | None = None
    target_depth: DepthMap | None = None

    def __post_init__(self):
        if len(self.source_images) != len(self.source_cameras):
            raise ShapeError(
                f"SceneBundle: {len(self.source_images)} images vs {len(self.source_cameras)} cameras"
            )
        if len(self.source_images) < 2:
            raise ShapeError(f"SceneBundle: need at least 2 source views, got {len(self.source_images)}")
        shapes = {img.shape for img in self.source_images}
        if len(shapes) != 1:
            raise ShapeError(f"SceneBundle: source image shapes differ: {sorted(shapes)}")
        for img, cam in zip(self.source_images, self.source_cameras):
            if img.shape != (3, cam.height, cam.width):
                raise ShapeError(f"SceneBundle: image {img.shape} does not match its camera {(3, cam.height, cam.width)}")
        if self.target_image is not None and self.target_image.shape != (
            3,
            self.target_camera.height,
            self.target_camera.width,
        ):
            raise ShapeError("SceneBundle: target image does not match the target camera")

    @property
    def n_views(self) -> int:
        return len(self.source_images)


def select_source_views(target: PinholeCamera, candidates, count: int):
    """Indices of the ``count`` candidates nearest to the target camera
    center (Euclidean), ties broken by index."""
    if count > len(candidates):
        raise ValueError(f"select_source_views: asked for {count} of {len(candidates)} candidates")
    tc = target.center()
    dists = np.array([np.linalg.norm(c.center() - tc) for c in candidates])
    order = np.argsort(dists, kind="stable")
    return [int(i) for i in order[:count]]


def write_scene_dir(path, views) -> None:
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    os.makedirs(os.path.join(path, "cams"), exist_ok=True)
    has_gt = any(v.gt_depth is not None for v in views)
    if has_gt:
        os.makedirs(os.path.join(path, "gt"), exist_ok=True)
    for i, view in enumerate(views):
        write_ppm(os.path.join(path, "images", f"{i:04d}.ppm"), view.image)
        write_camera_text(os.path.join(path, "cams", f"{i:04d}.txt"), view.camera)
        if view.gt_depth is not None:
            write_pfm(os.path.join(path, "gt", f"depth_{i:04d}.pfm"), view.gt_depth)


def load_scene_dir(path) -> list:
    image_dir = os.path.join(path, "images")
    if not os.path.isdir(image_dir):
        raise FormatError(f"{path}: no images/ directory")
    names = sorted(n for n in os.listdir(image_dir) if n.endswith(".ppm"))
    if not names:
        raise FormatError(f"{path}: no PPM images found")
    views = []
    for name in names:
        stem = os.path.splitext(name)[0]
        image = read_ppm(os.path.join(image_dir, name))
        cam_path = os.path.join(path, "cams", f"{stem}.txt")
        if not os.path.isfile(cam_path):
            raise FormatError(f"{path}: missing camera file for view {stem}")
        camera = read_camera_text(cam_path, width=image.shape[2], height=image.shape[1])
        depth_path = os.path.join(path, "gt", f"depth_{stem}.pfm")
        gt = read_pfm(depth_path) if os.path.isfile(depth_path) else None
        views.append(SceneView(image=image, camera=camera, gt_depth=gt))
    return views


def make_bundle(views, target_index: int, source_count: int) -> SceneBundle:
    """Bundle one view as target with its nearest neighbours as sources."""
    if not 0 <= target_index < len(views):
        raise ValueError(f"make_bundle: target index {target_index} out of range for {len(views)} views")
    target = views[target_index]
    rest = [v for i, v in enumerate(views) if i != target_index]
    chosen = select_source_views(target.camera, [v.camera for v in rest], source_count)
    sources = [rest[i] for i in chosen]
    gt_depth = None
    if target.gt_depth is not None:
        gt_depth = DepthMap(target.gt_depth, None)
    return SceneBundle(
        source_images=[v.image for v in sources],
        source_cameras=[v.camera for v in sources],
        target_camera=target.camera,
        target_image=target.image,
        target_depth=gt_depth,
    )
