import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loggpis.covariance import InvalidInputError
from loggpis.scene import AnalyticScene, Ball, Box
from loggpis.sensors import (DepthFrame, Intrinsics, Pose, Scan2D, back_project, depth_to_points,
                             project, scan_to_points, simulate_depth, simulate_scan)

SCAN = Scan2D(Pose.identity(2), np.radians(-135), np.radians(135), np.radians(1.0))
CAM = DepthFrame(Pose.identity(3), Intrinsics.from_fov(64, 48, 60.0))


def _angle_deg(a, b):
    c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return np.degrees(np.arccos(np.clip(c, -1, 1)))


class TestPose:
    @given(st.floats(-np.pi, np.pi), st.floats(-5, 5), st.floats(-5, 5))
    def test_heading_round_trip(self, h, x, y):
        p = Pose.from_heading(h, (x, y))
        assert np.isclose(np.cos(p.heading), np.cos(h)) and np.isclose(np.sin(p.heading), np.sin(h))

    def test_quaternion_round_trip(self, rng):
        for _ in range(20):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            p = Pose.from_quaternion(q, rng.normal(size=3))
            p2 = Pose.from_quaternion(p.quaternion(), p.translation)
            np.testing.assert_allclose(p2.rotation, p.rotation, atol=1e-12)
            assert p.quaternion()[0] >= 0

    def test_inverse_compose(self, rng):
        p = Pose.look_at((1, 2, 3), (0, 0, 0))
        X = rng.normal(size=(5, 3))
        np.testing.assert_allclose(p.inverse().compose(p).transform(X), X, atol=1e-12)

    def test_look_at_axis(self):
        p = Pose.look_at((1, 0, 0), (0, 0, 0))
        np.testing.assert_allclose(p.rotation[:, 2], [-1, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("R", [np.diag([1.0, -1.0]), [[1.0, 0.1], [0.0, 1.0]], np.eye(3)])
    def test_rejects_bad_rotation(self, R):
        with pytest.raises(InvalidInputError):
            Pose(R, [0.0, 0.0])


class TestScan:
    def test_circle_from_centre(self):
        scene = AnalyticScene([Ball((0, 0), 5.0)])
        scan = simulate_scan(scene, Pose.identity(2), SCAN, seed=0)
        np.testing.assert_allclose(scan.ranges, 5.0, atol=1e-12)
        pts = scan_to_points(scan)
        P = np.array([p.position for p in pts])
        N = np.array([p.normal for p in pts])
        assert len(pts) == SCAN.n_beams
        assert np.all(_angle_deg(N, -P) < 1.0)

    def test_miss_is_nan(self):
        scene = AnalyticScene([Box((3, 0), (1, 1))])
        scan = simulate_scan(scene, Pose.identity(2), SCAN, seed=0)
        assert np.isnan(scan.ranges[0]) and np.isfinite(scan.ranges[135])

    def test_deterministic(self):
        scene = AnalyticScene([Ball((0, 0), 5.0)])
        t = Scan2D(Pose.identity(2), -1.0, 1.0, 0.01, range_noise=0.01)
        a = simulate_scan(scene, Pose.identity(2), t, seed=7)
        b = simulate_scan(scene, Pose.identity(2), t, seed=7)
        assert a.ranges.tobytes() == b.ranges.tobytes()

    def test_collinear_normal(self):
        scan = Scan2D(Pose.identity(2), -0.1, 0.1, 0.1, ranges=1.0 / np.cos([-0.1, 0.0, 0.1]))
        pts = scan_to_points(scan)
        np.testing.assert_allclose(pts[1].normal, [-1.0, 0.0], atol=1e-12)

    def test_all_nan(self):
        assert scan_to_points(Scan2D(Pose.identity(2), -1, 1, 0.5)) == []

    def test_world_frame_consistency(self, rng):
        scan = Scan2D(Pose.identity(2), -1, 1, 0.05, ranges=rng.uniform(1, 2, 41))
        pose = Pose.from_heading(0.7, (1.5, -2.0))
        local = scan_to_points(scan)
        world = scan_to_points(Scan2D(pose, -1, 1, 0.05, ranges=scan.ranges))
        np.testing.assert_allclose([p.position for p in world],
                                   pose.transform([p.position for p in local]), atol=1e-9)
        np.testing.assert_allclose([p.normal for p in world],
                                   pose.rotate([p.normal for p in local]), atol=1e-9)

    def test_normals_face_sensor(self):
        scene = AnalyticScene([Ball((-2, 1.5), 0.8), Box((2, 2), (1.2, 0.8)), Ball((0, -1), 0.5)])
        pose = Pose.from_heading(0.3, (0.5, 4.0))
        pts = scan_to_points(simulate_scan(scene, pose, Scan2D(pose, -3, 3, 0.01, range_noise=0.01), 1))
        assert pts
        for p in pts:
            assert p.normal @ (pose.translation - p.position) > 0

    def test_bad_ranges(self):
        with pytest.raises(InvalidInputError):
            Scan2D(Pose.identity(2), 0, 1, 0.5, ranges=[1.0, -1.0, 1.0])
        with pytest.raises(InvalidInputError):
            Scan2D(Pose.identity(2), 0, 1, 0.5, ranges=[1.0])


class TestDepth:
    def test_box_face_centre_depth(self):
        scene = AnalyticScene([Box((0, 0, 1.5), (2, 2, 1))])
        intr = Intrinsics(50.0, 50.0, 32.0, 24.0, 65, 49)
        fr = simulate_depth(scene, Pose.identity(3), DepthFrame(Pose.identity(3), intr), seed=0)
        assert fr.depth[24, 32] == pytest.approx(1.0, abs=1e-12)

    def test_miss_invalid(self):
        scene = AnalyticScene([Box((0, 0, 2), (0.1, 0.1, 0.1))])
        fr = simulate_depth(scene, Pose.identity(3), CAM, seed=0)
        assert np.isnan(fr.depth[0, 0])

    def test_deterministic(self):
        scene = AnalyticScene([Box((0, 0, 2), (3, 3, 0.5))])
        t = DepthFrame(Pose.identity(3), CAM.intrinsics, depth_noise=0.01)
        a = simulate_depth(scene, Pose.identity(3), t, seed=3)
        b = simulate_depth(scene, Pose.identity(3), t, seed=3)
        assert a.depth.tobytes() == b.depth.tobytes()

    def test_zero_is_invalid(self):
        d = np.ones((48, 64))
        d[0, 0] = 0.0
        assert np.isnan(DepthFrame(Pose.identity(3), CAM.intrinsics, d).depth[0, 0])

    @given(st.floats(0, 63), st.floats(0, 47), st.floats(0.1, 10))
    def test_back_projection_round_trip(self, u, v, z):
        pose = Pose.look_at((1, 2, 1), (0, 0, 0))
        X = back_project(CAM.intrinsics, pose, u, v, z)
        pu, pv, pz = project(CAM.intrinsics, pose, X)
        assert abs(pu - u) < 1e-6 and abs(pv - v) < 1e-6 and abs(pz - z) < 1e-9

    @pytest.mark.parametrize("noise", [0.0, 0.002])
    def test_planar_wall_normals(self, noise):
        scene = AnalyticScene([Box((0, 0, 3), (10, 10, 1))])
        pose = Pose.look_at((0.3, 0.2, 0.0), (0.8, 0.5, 2.5), up=(0, 1, 0))
        t = DepthFrame(Pose.identity(3), CAM.intrinsics, depth_noise=noise)
        pts = depth_to_points(simulate_depth(scene, pose, t, seed=1))
        N = np.array([p.normal for p in pts])
        ang = _angle_deg(N, np.tile([0, 0, -1.0], (len(pts), 1)))
        assert len(pts) > 1000
        if noise == 0:
            assert ang.max() < 2.0
        else:
            assert np.percentile(ang, 95) < 2.0

    def test_stride_bound(self):
        scene = AnalyticScene([Box((0, 0, 3), (10, 10, 1))])
        fr = simulate_depth(scene, Pose.identity(3), CAM, seed=0)
        assert len(depth_to_points(fr, stride=48 * 64)) <= 4

    def test_box_edge_normals_not_averaged(self):
        box = Box((0, 0, 0), (0.3, 0.2, 0.2))
        scene = AnalyticScene([box])
        pose = Pose.look_at((0.8, 0.8, 0.6), (0, 0, 0))
        t = DepthFrame(Pose.identity(3), CAM.intrinsics, depth_noise=0.002)
        pts = depth_to_points(simulate_depth(scene, pose, t, seed=2))
        faces = np.vstack([np.eye(3), -np.eye(3)])
        worst = [np.min(_angle_deg(np.tile(p.normal, (6, 1)), faces)) for p in pts]
        assert len(pts) > 50
        assert max(worst) < 20.0

    def test_normals_face_sensor(self):
        scene = AnalyticScene([Box((0, 0, 0.1), (0.3, 0.2, 0.2)), Ball((0.4, 0, 0.1), 0.1)])
        pose = Pose.look_at((1, 0.5, 0.8), (0, 0, 0.1))
        t = DepthFrame(Pose.identity(3), CAM.intrinsics, depth_noise=0.002)
        for p in depth_to_points(simulate_depth(scene, pose, t, seed=0)):
            assert p.normal @ (pose.translation - p.position) > 0

    def test_bad_stride(self):
        with pytest.raises(InvalidInputError):
            depth_to_points(CAM, stride=0)
