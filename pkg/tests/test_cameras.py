"""Camera model, homographies, warping, and back-projection oracles."""

import numpy as np
import pytest

from conftest import make_camera, random_rotation, smooth_field
from sweepsplat.cameras import (
    CameraError,
    DepthHypotheses,
    DepthMap,
    PinholeCamera,
    backproject_depth,
    homography_for_plane,
    ray_direction_features,
    read_camera_text,
    sample_depth_hypotheses,
    warp_feature,
    write_camera_text,
)


class TestPinholeCamera:
    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(CameraError, match="orthonormal"):
            make_camera(rotation=np.eye(3) + 0.01)

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(CameraError, match="determinant"):
            make_camera(rotation=r)

    def test_rejects_bad_depth_range(self):
        with pytest.raises(CameraError, match="depth range"):
            make_camera(depth_min=5.0, depth_max=2.0)

    def test_rejects_lower_triangular_intrinsics(self):
        k = np.array([[50.0, 0, 16], [5.0, 50.0, 12], [0, 0, 1]])
        cam = make_camera()
        with pytest.raises(CameraError, match="upper-triangular"):
            PinholeCamera(k, cam.rotation, cam.translation, 32, 24, 1.0, 10.0)

    def test_center_round_trip(self, rng):
        r = random_rotation(rng)
        t = rng.standard_normal(3)
        cam = make_camera(rotation=r, translation=t)
        np.testing.assert_allclose(cam.rotation @ cam.center() + cam.translation, 0.0, atol=1e-12)

    def test_scaled_halves_intrinsics(self):
        cam = make_camera(fx=60.0, width=32, height=24)
        half = cam.scaled(0.5)
        assert (half.width, half.height) == (16, 12)
        np.testing.assert_allclose(half.intrinsics[0, 0], 30.0)
        np.testing.assert_allclose(half.intrinsics[:2, 2], cam.intrinsics[:2, 2] * 0.5)

    def test_scaled_rejects_fractional_result(self):
        with pytest.raises(CameraError, match="non-integral"):
            make_camera(width=30, height=30).scaled(0.25)


class TestDepthHypotheses:
    def test_coarse_uniform_endpoints(self):
        cam = make_camera(depth_min=2.5, depth_max=10.0)
        hyp = sample_depth_hypotheses(cam, 64, "uniform-depth")
        assert hyp.values[0] == pytest.approx(2.5)
        assert hyp.values[-1] == pytest.approx(10.0)
        np.testing.assert_allclose(np.diff(hyp.values), (10.0 - 2.5) / 63, rtol=1e-5)

    def test_inverse_depth_three_points(self):
        """Evenly spaced reciprocals of [1, 3] invert to 1, 1.5, 3."""
        cam = make_camera(depth_min=1.0, depth_max=3.0)
        hyp = sample_depth_hypotheses(cam, 3, "uniform-inverse-depth")
        np.testing.assert_allclose(hyp.values, [1.0, 1.5, 3.0], rtol=1e-6)

    def test_fine_window_clamped(self):
        cam = make_camera(depth_min=2.5, depth_max=10.0)
        center = DepthMap(np.full((4, 4), 5.0, dtype=np.float32), None)
        hyp = sample_depth_hypotheses(cam, 8, "uniform-depth", center=center, radius=0.5)
        assert hyp.per_pixel and hyp.stage == "fine"
        assert hyp.values.min() >= 4.5 - 1e-6
        assert hyp.values.max() <= 5.5 + 1e-6

    def test_fine_clamps_to_camera_range(self):
        cam = make_camera(depth_min=2.5, depth_max=10.0)
        center = DepthMap(np.full((2, 2), 2.6, dtype=np.float32), None)
        hyp = sample_depth_hypotheses(cam, 8, "uniform-depth", center=center, radius=1.0)
        assert hyp.values.min() >= 2.5 - 1e-6

    def test_strictly_increasing_every_mode(self, rng):
        cam = make_camera(depth_min=1.0, depth_max=8.0)
        for mode in ("uniform-depth", "uniform-inverse-depth"):
            hyp = sample_depth_hypotheses(cam, 16, mode)
            assert np.all(np.diff(hyp.values) > 0)
            assert hyp.values[0] >= 1.0 - 1e-6 and hyp.values[-1] <= 8.0 + 1e-6
        center = DepthMap(rng.uniform(2.0, 7.0, (3, 5)).astype(np.float32), None)
        fine = sample_depth_hypotheses(cam, 8, "uniform-depth", center=center, radius=0.4)
        assert np.all(np.diff(fine.values, axis=0) > 0)

    def test_count_below_two_rejected(self):
        with pytest.raises(ValueError, match="count"):
            sample_depth_hypotheses(make_camera(), 1)

    def test_fine_without_center_has_no_radius_requirement(self):
        with pytest.raises(ValueError, match="radius"):
            sample_depth_hypotheses(make_camera(), 8, center=DepthMap(np.ones((2, 2), dtype=np.float32), None))


class TestHomography:
    def test_identity_for_same_camera(self):
        cam = make_camera()
        for depth in (1.0, 3.7, 9.9):
            h = homography_for_plane(cam, cam, depth)
            np.testing.assert_allclose(h / h[2, 2], np.eye(3), atol=1e-10)

    def test_translation_matches_projection_oracle(self, rng):
        """Project a plane point into the shifted camera with scalar math."""
        tgt = make_camera(fx=50.0, width=32, height=24)
        src = make_camera(fx=50.0, width=32, height=24, translation=[-0.3, 0.1, 0.05])
        depth = 4.0
        h = homography_for_plane(src, tgt, depth)
        for u, v in [(16.0, 12.0), (3.5, 20.0), (30.0, 2.0)]:
            point = depth * np.linalg.inv(tgt.intrinsics) @ np.array([u, v, 1.0])
            cam_src = src.rotation @ point + src.translation
            proj = src.intrinsics @ cam_src
            want = proj[:2] / proj[2]
            got = h @ np.array([u, v, 1.0])
            np.testing.assert_allclose(got[:2] / got[2], want, atol=1e-9)

    def test_rotated_rig_matches_projection_oracle(self, rng):
        tgt = make_camera()
        for _ in range(20):
            r = random_rotation(rng)
            # keep the source looking roughly forward so the plane stays visible
            r = 0.9 * np.eye(3) + 0.1 * r
            q, _ = np.linalg.qr(r)
            q *= np.sign(np.linalg.det(q))
            src = make_camera(rotation=q, translation=rng.uniform(-0.5, 0.5, 3))
            depth = float(rng.uniform(2.0, 8.0))
            h = homography_for_plane(src, tgt, depth)
            u, v = rng.uniform(2, 30), rng.uniform(2, 22)
            point = depth * np.linalg.inv(tgt.intrinsics) @ np.array([u, v, 1.0])
            world = tgt.rotation.T @ (point - tgt.translation)
            cam_src = src.rotation @ world + src.translation
            proj = src.intrinsics @ cam_src
            got = h @ np.array([u, v, 1.0])
            np.testing.assert_allclose(got[:2] / got[2], proj[:2] / proj[2], atol=1e-8)

    def test_positive_depth_required(self):
        cam = make_camera()
        with pytest.raises(CameraError, match="positive"):
            homography_for_plane(cam, cam, 0.0)


class TestWarpFeature:
    def test_identity_passthrough_full_mask(self, rng):
        feat = rng.standard_normal((2, 6, 8)).astype(np.float32)
        out, mask = warp_feature(feat, np.eye(3), (6, 8))
        np.testing.assert_allclose(out, feat, atol=1e-6)
        assert mask.all()

    def test_unit_shift_masks_last_column(self, rng):
        feat = rng.standard_normal((1, 4, 5)).astype(np.float32)
        shift = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        out, mask = warp_feature(feat, shift, (4, 5))
        np.testing.assert_allclose(out[:, :, :-1], feat[:, :, 1:], atol=1e-6)
        assert not mask[:, -1].any()
        assert mask[:, :-1].all()

    def test_random_homography_matches_scalar_oracle(self, rng):
        feat = smooth_field(rng, (2, 8, 8))
        h = np.eye(3) + 0.02 * rng.standard_normal((3, 3))
        out, mask = warp_feature(feat, h, (8, 8))
        for i, j in [(2, 2), (5, 3), (6, 6)]:
            p = h @ np.array([j + 0.5, i + 0.5, 1.0])
            x, y = p[0] / p[2] - 0.5, p[1] / p[2] - 0.5
            if not (0 <= x <= 7 and 0 <= y <= 7):
                assert not mask[i, j]
                continue
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            fx, fy = x - x0, y - y0
            x1, y1 = min(x0 + 1, 7), min(y0 + 1, 7)
            f64 = feat.astype(np.float64)
            want = (
                f64[:, y0, x0] * (1 - fx) * (1 - fy)
                + f64[:, y0, x1] * fx * (1 - fy)
                + f64[:, y1, x0] * (1 - fx) * fy
                + f64[:, y1, x1] * fx * fy
            )
            np.testing.assert_allclose(out[:, i, j], want, atol=1e-5)

    def test_warp_then_unwarp_recovers(self, rng):
        """Two bilinear resamplings keep in-bounds values within 2e-3.

        Bilinear sampling is exact on linear fields, so the error budget is
        set by the curvature of the band-limited perturbation on top.
        """
        xx, yy = np.meshgrid(np.arange(16.0), np.arange(16.0))
        ramp = np.stack([0.5 + 0.03 * xx - 0.02 * yy, 0.1 + 0.01 * xx + 0.04 * yy]).astype(np.float32)
        feat = ramp + 0.02 * smooth_field(rng, (2, 16, 16), upscale=8)
        h = np.array([[1.0, 0.01, 0.4], [-0.008, 1.0, -0.3], [0.0002, -0.0001, 1.0]])
        fwd, m1 = warp_feature(feat, h, (16, 16))
        back, m2 = warp_feature(fwd, np.linalg.inv(h), (16, 16))
        # compare away from the border, where the forward warp had support
        inner = np.zeros((16, 16), dtype=bool)
        inner[2:-2, 2:-2] = True
        ok = inner & m2
        assert ok.sum() > 100
        assert np.max(np.abs(back[:, ok] - feat[:, ok])) < 2e-3


class TestBackprojection:
    def test_principal_point_goes_to_axis(self):
        cam = make_camera(fx=50.0, width=32, height=24, cx=16.0, cy=12.0)
        depth = DepthMap(np.full((24, 32), 4.0, dtype=np.float32), None)
        pts = backproject_depth(depth, cam)
        # pixel (11, 15) has center (15.5, 11.5); principal point (16, 12)
        # lies half a pixel further, so interpolate: use the exact formula.
        ray = np.linalg.inv(cam.intrinsics) @ np.array([15.5, 11.5, 1.0])
        np.testing.assert_allclose(pts[11, 15], 4.0 * ray, atol=1e-7)

    def test_identity_pose_center_pixel_on_axis(self):
        cam = make_camera(fx=50.0, width=32, height=24, cx=15.5, cy=11.5)
        depth = DepthMap(np.full((24, 32), 6.0, dtype=np.float32), None)
        pts = backproject_depth(depth, cam)
        np.testing.assert_allclose(pts[11, 15], [0.0, 0.0, 6.0], atol=1e-7)

    def test_project_round_trip_random_rigs(self, rng):
        """100 random camera/depth samples: reprojection error < 1e-4 px."""
        for _ in range(100):
            cam = make_camera(
                fx=float(rng.uniform(30, 80)),
                rotation=random_rotation(rng),
                translation=rng.standard_normal(3),
                width=16,
                height=12,
            )
            d = rng.uniform(1.0, 10.0, (12, 16)).astype(np.float32)
            pts = backproject_depth(DepthMap(d, None), cam)
            uv, z = cam.project(pts)
            grid = cam.pixel_centers()
            err = np.hypot(uv[..., 0] - grid[0], uv[..., 1] - grid[1])
            assert err.max() < 1e-4
            np.testing.assert_allclose(z, d, atol=1e-5)

    def test_plane_scene_points_on_plane(self):
        from sweepsplat.synthetic import generate_synthetic_scene

        bundle = generate_synthetic_scene("plane", 2, resolution=(32, 40), seed=0)
        pts = backproject_depth(bundle.target_depth, bundle.target_camera)
        np.testing.assert_allclose(pts[..., 2], 5.0, atol=1e-4)


class TestRayDirectionFeatures:
    def test_same_camera_gives_zero_diff_unit_dot(self, rng):
        cam = make_camera()
        pts = backproject_depth(DepthMap(rng.uniform(2, 8, (24, 32)).astype(np.float32), None), cam)
        rays = ray_direction_features(cam, cam, pts)
        np.testing.assert_allclose(rays[:3], 0.0, atol=1e-7)
        np.testing.assert_allclose(rays[3], 1.0, atol=1e-7)

    def test_antipodal_center_dot_minus_one(self):
        tgt = make_camera(fx=50.0, width=32, height=24, cx=15.5, cy=11.5)
        flip = np.diag([1.0, -1.0, -1.0])  # looks back down -z
        src = PinholeCamera(
            intrinsics=tgt.intrinsics,
            rotation=flip,
            translation=-flip @ np.array([0.0, 0.0, 10.0]),
            width=32,
            height=24,
            depth_min=1.0,
            depth_max=10.0,
        )
        pts = backproject_depth(DepthMap(np.full((24, 32), 5.0, dtype=np.float32), None), tgt)
        rays = ray_direction_features(tgt, src, pts)
        assert rays[3, 11, 15] == pytest.approx(-1.0, abs=1e-6)

    def test_matches_vector_math_oracle(self, rng):
        tgt = make_camera()
        src = make_camera(rotation=random_rotation(rng), translation=rng.standard_normal(3))
        pts = backproject_depth(DepthMap(rng.uniform(2, 9, (24, 32)).astype(np.float32), None), tgt)
        rays = ray_direction_features(tgt, src, pts)
        for i, j in [(0, 0), (10, 20), (23, 31)]:
            p = pts[i, j]
            rt = p - tgt.center()
            rt = rt / np.linalg.norm(rt)
            rs = p - src.center()
            rs = rs / np.linalg.norm(rs)
            np.testing.assert_allclose(rays[:3, i, j], rt - rs, atol=1e-6)
            assert rays[3, i, j] == pytest.approx(float(rt @ rs), abs=1e-6)


class TestCameraText:
    def test_round_trip_exact(self, tmp_path, rng):
        cam = make_camera(
            fx=123.456789,
            rotation=random_rotation(rng),
            translation=rng.standard_normal(3) * 3,
            depth_min=0.31415926,
            depth_max=27.1828182845,
        )
        path = tmp_path / "cam.txt"
        write_camera_text(path, cam)
        back = read_camera_text(path, width=cam.width, height=cam.height)
        assert np.array_equal(back.intrinsics, cam.intrinsics)
        assert np.array_equal(back.rotation, cam.rotation)
        assert np.array_equal(back.translation, cam.translation)
        assert back.depth_min == cam.depth_min and back.depth_max == cam.depth_max

    def test_file_shape(self, tmp_path):
        cam = make_camera()
        path = tmp_path / "cam.txt"
        write_camera_text(path, cam)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "extrinsic"
        assert lines[5] == "intrinsic"
        assert len(lines) == 10
        assert len(lines[-1].split()) == 2

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "cam.txt"
        path.write_text("extrinsic\n1 2 3\n")
        from sweepsplat.errors import FormatError

        with pytest.raises(FormatError):
            read_camera_text(path)
