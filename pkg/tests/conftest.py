import numpy as np
import pytest

from sweepsplat.cameras import PinholeCamera


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_camera(
    fx=50.0,
    fy=None,
    cx=None,
    cy=None,
    width=32,
    height=24,
    rotation=None,
    translation=None,
    depth_min=1.0,
    depth_max=10.0,
):
    fy = fx if fy is None else fy
    cx = width / 2.0 if cx is None else cx
    cy = height / 2.0 if cy is None else cy
    return PinholeCamera(
        intrinsics=np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]]),
        rotation=np.eye(3) if rotation is None else rotation,
        translation=np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64),
        width=width,
        height=height,
        depth_min=depth_min,
        depth_max=depth_max,
    )


def random_rotation(rng):
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] *= -1
    return q


def smooth_field(rng, shape, upscale=4):
    """Band-limited random field: low-res noise bilinearly upsampled."""
    from sweepsplat.kernels import bilinear_upsample_x2

    c, h, w = shape
    small = rng.standard_normal((c, max(2, h // upscale), max(2, w // upscale))).astype(np.float32)
    out = small
    while out.shape[1] < h or out.shape[2] < w:
        out = bilinear_upsample_x2(out)
    return out[:, :h, :w]
