import math

import numpy as np
import pytest

from kaleidisc.errors import BehindCameraError, InvalidPoseError
from kaleidisc.pose import (CameraPose, Intrinsics, look_at_pose, project,
                            projected_orientation, relative_rotation,
                            rotation_about_axis, world_to_camera)


def random_rotation(rng):
    axis = rng.normal(size=3)
    return rotation_about_axis(axis, rng.uniform(0, 2 * math.pi))


class TestWorldToCamera:
    def test_identity(self):
        pose = CameraPose(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(world_to_camera(pose, [1, 2, 3]), [1, 2, 3])

    def test_translation_only(self):
        pose = CameraPose(np.eye(3), [0, 0, 5])
        np.testing.assert_array_equal(world_to_camera(pose, [0, 0, 0]), [0, 0, 5])

    def test_z_rotation(self):
        R = rotation_about_axis([0, 0, 1], math.pi / 2)
        pose = CameraPose(R, np.zeros(3))
        np.testing.assert_allclose(world_to_camera(pose, [1, 0, 0]), [0, 1, 0],
                                   atol=1e-12)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pose = CameraPose(random_rotation(rng), rng.normal(size=3))
            p = rng.normal(size=3)
            back = world_to_camera(pose.inverse(), world_to_camera(pose, p))
            np.testing.assert_allclose(back, p, atol=1e-9)

    def test_finite_difference_jacobian_equals_rotation(self):
        rng = np.random.default_rng(1)
        pose = CameraPose(random_rotation(rng), rng.normal(size=3))
        p = rng.normal(size=3)
        eps = 1e-7
        J = np.zeros((3, 3))
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = eps
            J[:, k] = (world_to_camera(pose, p + dp)
                       - world_to_camera(pose, p - dp)) / (2 * eps)
        np.testing.assert_allclose(J, pose.rotation, atol=1e-6)

    def test_rejects_non_rotation(self):
        with pytest.raises(InvalidPoseError):
            CameraPose(2 * np.eye(3), np.zeros(3))


class TestProject:
    def test_optical_axis(self):
        intr = Intrinsics(100, 100, 320, 240, 480, 640)
        np.testing.assert_array_equal(project(intr, [0, 0, 5]), [320, 240])

    def test_similar_triangles(self):
        intr = Intrinsics(100, 100, 0, 0, 10, 10)
        np.testing.assert_allclose(project(intr, [1, 0, 2]), [50, 0])

    def test_behind_camera(self):
        intr = Intrinsics(100, 100, 5, 5, 10, 10)
        with pytest.raises(BehindCameraError):
            project(intr, [0, 0, -1.0])


class TestLookAtPose:
    def test_nadir_limit(self):
        pose = look_at_pose(2.0, 90.0 - 1e-5, 0.0)
        np.testing.assert_allclose(world_to_camera(pose, np.zeros(3)),
                                   [0, 0, 2], atol=1e-6)
        assert pose.camera_center[1] < 0

    def test_center_on_sphere(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = rng.uniform(0.5, 5)
            pose = look_at_pose(d, rng.uniform(1, 89), rng.uniform(0, 360))
            assert abs(np.linalg.norm(pose.camera_center) - d) < 1e-9

    def test_origin_depth_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pose = look_at_pose(rng.uniform(0.5, 5), rng.uniform(1, 89),
                                rng.uniform(0, 360))
            assert world_to_camera(pose, np.zeros(3))[2] > 0

    def test_ring_mode_pose_is_valid(self):
        pose = look_at_pose(2.4, 55.0, 123.0)
        assert abs(np.linalg.norm(pose.camera_center) - 2.4) < 1e-9

    @pytest.mark.parametrize("pitch", [0.0, 90.0, -5.0, 100.0])
    def test_pitch_domain(self, pitch):
        with pytest.raises(InvalidPoseError):
            look_at_pose(2.0, pitch, 0.0)

    def test_distance_domain(self):
        with pytest.raises(InvalidPoseError):
            look_at_pose(0.0, 45.0, 0.0)


class TestProjectedOrientation:
    def test_identity_rows(self):
        got = projected_orientation(np.eye(3))
        np.testing.assert_array_equal(got, [[1, 0, 0], [0, 0, 0], [0, 0, 1]])

    def test_second_component_zero(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            got = projected_orientation(random_rotation(rng))
            np.testing.assert_array_equal(got[:, 1], np.zeros(3))

    def test_rotation_about_y(self):
        phi = 0.7
        R = rotation_about_axis([0, 1, 0], phi)
        got = projected_orientation(R)
        assert got[0, 0] == pytest.approx(math.cos(phi), abs=1e-12)
        assert np.linalg.norm(got[0]) == pytest.approx(1.0, abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        R = random_rotation(rng)
        once = projected_orientation(R)
        np.testing.assert_array_equal(projected_orientation(once), once)


class TestRelativeRotation:
    def test_same_pose(self):
        R = rotation_about_axis([1, 2, 3], 1.0)
        np.testing.assert_allclose(relative_rotation(R, R), np.eye(3), atol=1e-12)

    def test_z_rotation(self):
        Rz = rotation_about_axis([0, 0, 1], math.radians(30))
        np.testing.assert_allclose(relative_rotation(Rz, np.eye(3)), Rz)

    def test_orthonormal(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            rel = relative_rotation(random_rotation(rng), random_rotation(rng))
            np.testing.assert_allclose(rel.T @ rel, np.eye(3), atol=1e-9)
            assert np.linalg.det(rel) == pytest.approx(1.0, abs=1e-9)
