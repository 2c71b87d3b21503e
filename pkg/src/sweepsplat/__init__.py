"""Feed-forward novel view synthesis from posed images.

Plane-sweep stereo regresses per-pixel depth in two cascaded stages; the
depth back-projects to pixel-aligned 3D Gaussians whose attributes are
decoded from cross-view attended features, and a tile-based differentiable
rasterizer renders the novel view.
"""

from .cameras import DepthHypotheses, DepthMap, PinholeCamera
from .config import PipelineConfig
from .gaussians import GaussianCloud
from .pipeline import PipelineResult, init_pipeline_weights, run_pipeline
from .rasterizer import RenderedImage, rasterize
from .scene import SceneBundle, select_source_views
from .synthetic import generate_synthetic_scene

__all__ = [
    "DepthHypotheses",
    "DepthMap",
    "GaussianCloud",
    "PinholeCamera",
    "PipelineConfig",
    "PipelineResult",
    "RenderedImage",
    "SceneBundle",
    "generate_synthetic_scene",
    "init_pipeline_weights",
    "rasterize",
    "run_pipeline",
    "select_source_views",
]

__version__ = "0.1.0"
