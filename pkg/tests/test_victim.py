import numpy as np
import pytest

from kaleidisc.disc import DiscImage, DiscSpec, apply_homography, compose_disc
from kaleidisc.errors import (EstimationFailedError, InsufficientMatchesError,
                              InvalidInputError)
from kaleidisc.metrics import rotation_angle
from kaleidisc.pose import Intrinsics, look_at_pose, relative_rotation
from kaleidisc.scene import SceneConfig, render_view, reframe_pointmap
from kaleidisc.textures import speckle_texture
from kaleidisc.victim import (BuiltinVictim, EstimatedRelPose, Match,
                              PlaneInCamera, SmoothPointmapVictim,
                              VictimConfig, detect_and_match, estimate_pose,
                              plane_in_camera, pointmaps_from_estimate)

INTR = Intrinsics.centered(160, 176.0)


def plain_scene(seed=5):
    tex = speckle_texture((192, 192), np.random.default_rng(seed))
    return SceneConfig(DiscImage.from_array(tex), 1.0)


def gt_relative(va, vb):
    R = relative_rotation(vb.pose.rotation, va.pose.rotation)
    t = vb.pose.translation - R @ va.pose.translation
    return R, t


def gt_homography(va, vb, intr=INTR):
    plane = plane_in_camera(va.pose)
    R, t = gt_relative(va, vb)
    K = np.array([[intr.fx, 0, intr.cx], [0, intr.fy, intr.cy], [0, 0, 1.0]])
    return K @ (R + np.outer(t, plane.normal) / plane.dist) @ np.linalg.inv(K)


class TestDetectAndMatch:
    def test_identical_pair_self_matches(self):
        view = render_view(plain_scene(), look_at_pose(2.4, 55.0, 10.0), INTR)
        matches = detect_and_match(view.image, view.image, view.disc_mask, 24)
        for m in matches:
            # Sub-pixel peak refinement may move the match within its pixel.
            np.testing.assert_allclose(m.point_a, m.point_b, atol=0.5)
            assert m.score > 1 - 1e-6

    def test_constant_images_insufficient(self):
        img = np.full((64, 64, 3), 0.5)
        mask = np.ones((64, 64), dtype=bool)
        with pytest.raises(InsufficientMatchesError):
            detect_and_match(img, img, mask, 16)

    def test_min_keypoint_count(self):
        img = np.zeros((32, 32, 3))
        with pytest.raises(InvalidInputError):
            detect_and_match(img, img, np.ones((32, 32), dtype=bool), 4)

    def test_median_reprojection_under_gt_homography(self):
        scene = plain_scene()
        va = render_view(scene, look_at_pose(2.4, 55.0, 10.0), INTR)
        vb = render_view(scene, look_at_pose(2.4, 55.0, 40.0), INTR)
        matches = detect_and_match(va.image, vb.image, va.disc_mask, 48)
        H = gt_homography(va, vb)
        pa = np.stack([m.point_a for m in matches])
        pb = np.stack([m.point_b for m in matches])
        err = np.linalg.norm(apply_homography(H, pa) - pb, axis=1)
        assert np.median(err) < 2.0


class TestEstimatePose:
    def _synthetic_matches(self, va, vb, n, rng, noise=0.0):
        H = gt_homography(va, vb)
        matches = []
        ys, xs = np.nonzero(va.disc_mask)
        idx = rng.choice(len(ys), size=n, replace=False)
        pa = np.stack([xs[idx], ys[idx]], axis=1).astype(float)
        pb = apply_homography(H, pa)
        keep = ((pb[:, 0] > 2) & (pb[:, 0] < 157) & (pb[:, 1] > 2)
                & (pb[:, 1] < 157))
        for a, b in zip(pa[keep], pb[keep]):
            matches.append(Match(a, b + rng.normal(0, noise, 2), 1.0))
        return matches

    def test_exact_matches_recover_pose(self):
        scene = plain_scene()
        rng = np.random.default_rng(0)
        va = render_view(scene, look_at_pose(2.4, 55.0, 0.0), INTR)
        vb = render_view(scene, look_at_pose(2.6, 40.0, 70.0), INTR)
        matches = self._synthetic_matches(va, vb, 40, rng)
        est = estimate_pose(matches, INTR, plane_in_camera(va.pose).normal)
        R_gt, _ = gt_relative(va, vb)
        assert rotation_angle(est.rotation, R_gt) < 0.5

    def test_outlier_contamination(self):
        scene = plain_scene()
        rng = np.random.default_rng(1)
        va = render_view(scene, look_at_pose(2.4, 55.0, 0.0), INTR)
        vb = render_view(scene, look_at_pose(2.4, 55.0, 50.0), INTR)
        matches = self._synthetic_matches(va, vb, 40, rng, noise=0.2)
        n_out = int(len(matches) * 0.43)  # ~30% of the final list
        for k in range(n_out):
            matches.append(Match(matches[k].point_a,
                                 rng.uniform(10, 150, 2), 0.9))
        est = estimate_pose(matches, INTR, plane_in_camera(va.pose).normal)
        R_gt, _ = gt_relative(va, vb)
        assert rotation_angle(est.rotation, R_gt) < 2.0

    def test_pure_yaw_recovered(self):
        scene = plain_scene()
        rng = np.random.default_rng(2)
        for phi in (20.0, 45.0, 90.0):
            va = render_view(scene, look_at_pose(2.4, 55.0, 0.0), INTR)
            vb = render_view(scene, look_at_pose(2.4, 55.0, phi), INTR)
            matches = self._synthetic_matches(va, vb, 40, rng)
            est = estimate_pose(matches, INTR, plane_in_camera(va.pose).normal)
            R_gt, _ = gt_relative(va, vb)
            assert rotation_angle(est.rotation, R_gt) < 1.0

    def test_too_few_matches(self):
        m = [Match(np.zeros(2), np.zeros(2), 1.0)] * 7
        with pytest.raises(InvalidInputError):
            estimate_pose(m, INTR, np.array([0, 1.0, 0]))

    def test_degenerate_consensus(self):
        rng = np.random.default_rng(3)
        matches = [Match(rng.uniform(0, 159, 2), rng.uniform(0, 159, 2), 0.9)
                   for _ in range(20)]
        with pytest.raises(EstimationFailedError):
            estimate_pose(matches, INTR, np.array([0, 1.0, 0]),
                          VictimConfig(ransac_iters=50), seed=0)


class TestPointmapsFromEstimate:
    def test_perfect_estimate_matches_ground_truth(self):
        scene = plain_scene()
        va = render_view(scene, look_at_pose(2.4, 55.0, 0.0), INTR)
        vb = render_view(scene, look_at_pose(2.5, 50.0, 60.0), INTR)
        R, t = gt_relative(va, vb)
        plane = plane_in_camera(va.pose)
        est = EstimatedRelPose(R, t / np.linalg.norm(t), 99, np.eye(3),
                               t / plane.dist, False)
        pm_a, pm_b = pointmaps_from_estimate(est, INTR, plane)
        sel = va.disc_mask & pm_a.valid & va.pointmap.valid
        err_a = np.abs(pm_a.coords[sel] - va.pointmap.coords[sel]).max()
        assert err_a < 1e-4
        gt_b_in_a = reframe_pointmap(vb.pointmap, vb.pose, va.pose)
        sel_b = vb.disc_mask & pm_b.valid & vb.pointmap.valid
        err_b = np.abs(pm_b.coords[sel_b] - gt_b_in_a.coords[sel_b]).max()
        assert err_b < 1e-4

    def test_identity_estimate_maps_coincide(self):
        plane = PlaneInCamera(np.array([0.0, 0.3, 0.954]), 2.0)
        est = EstimatedRelPose(np.eye(3), np.zeros(3), 9, np.eye(3),
                               np.zeros(3), True)
        pm_a, pm_b = pointmaps_from_estimate(est, INTR, plane)
        np.testing.assert_allclose(pm_a.coords, pm_b.coords, atol=1e-12)

    def test_plane_behind_camera(self):
        est = EstimatedRelPose(np.eye(3), np.zeros(3), 9, np.eye(3),
                               np.zeros(3), True)
        with pytest.raises(EstimationFailedError):
            pointmaps_from_estimate(est, INTR,
                                    PlaneInCamera(np.array([0, 0, 1.0]), -1.0))


class TestEndToEnd:
    def test_competent_on_plain_texture(self):
        scene = plain_scene()
        victim = BuiltinVictim(VictimConfig())
        rng = np.random.default_rng(4)
        errs = []
        for k in range(24):
            p1, p2 = rng.uniform(10, 85, 2)
            d1, d2 = rng.uniform(2, 3, 2)
            y1, y2 = rng.uniform(0, 360, 2)
            va = render_view(scene, look_at_pose(d1, p1, y1), INTR)
            vb = render_view(scene, look_at_pose(d2, p2, y2), INTR)
            try:
                res = victim.pointmaps(va, vb, seed=k)
                R_gt, _ = gt_relative(va, vb)
                errs.append(rotation_angle(res.estimate.rotation, R_gt))
            except Exception:
                errs.append(180.0)
        assert np.median(errs) < 2.0

    def test_texture_sensitivity(self):
        # Perturbing the texture moves the estimate (non-zero sensitivity).
        spec = DiscSpec(12, 96)
        rng = np.random.default_rng(6)
        seg = speckle_texture(spec.segment_shape, rng, spacing=14)
        base = compose_disc(seg, spec)
        pert = compose_disc(np.clip(seg + rng.normal(0, 0.05, seg.shape), 0, 1),
                            spec)
        victim = BuiltinVictim(VictimConfig())
        va0 = render_view(SceneConfig(base, 1.0), look_at_pose(2.4, 55, 5), INTR)
        vb0 = render_view(SceneConfig(base, 1.0), look_at_pose(2.4, 55, 95), INTR)
        va1 = render_view(SceneConfig(pert, 1.0), look_at_pose(2.4, 55, 5), INTR)
        vb1 = render_view(SceneConfig(pert, 1.0), look_at_pose(2.4, 55, 95), INTR)
        r0 = victim.pointmaps(va0, vb0, seed=0)
        r1 = victim.pointmaps(va1, vb1, seed=0)
        diff = np.abs(r0.pointmap_b.coords - r1.pointmap_b.coords).max()
        assert diff > 1e-6


class TestSmoothVictim:
    def test_identical_images_full_consistency(self):
        scene = plain_scene()
        view = render_view(scene, look_at_pose(2.4, 55.0, 30.0), INTR)
        res = SmoothPointmapVictim().pointmaps(view, view)
        np.testing.assert_allclose(res.pointmap_a.coords, res.pointmap_b.coords,
                                   atol=1e-9)

    def test_insensitive_mode_ignores_texture(self):
        scene_a, scene_b = plain_scene(1), plain_scene(2)
        pose_a, pose_b = look_at_pose(2.4, 55, 0.0), look_at_pose(2.4, 55, 120.0)
        victim = SmoothPointmapVictim(sensitive=False)
        r1 = victim.pointmaps(render_view(scene_a, pose_a, INTR),
                              render_view(scene_a, pose_b, INTR))
        r2 = victim.pointmaps(render_view(scene_b, pose_a, INTR),
                              render_view(scene_b, pose_b, INTR))
        np.testing.assert_allclose(r1.pointmap_b.coords, r2.pointmap_b.coords,
                                   atol=1e-12)

    def test_gradients_match_finite_differences(self):
        from dataclasses import replace

        from kaleidisc.loss import Observation, poc_loss
        from kaleidisc.pose import project, world_to_camera

        spec = DiscSpec(12, 64)
        seg = np.random.default_rng(7).random(spec.segment_shape + (3,))
        scene = SceneConfig(compose_disc(seg, spec), 1.0)
        intr = Intrinsics.centered(96, 105.0)
        va = render_view(scene, look_at_pose(2.4, 55, 20.0), intr)
        vb = render_view(scene, look_at_pose(2.4, 55, 170.0), intr)
        victim = SmoothPointmapVictim(gradients=True)
        res = victim.pointmaps(va, vb)

        def obs(v, pm):
            c = project(intr, world_to_camera(v.pose, np.zeros(3)))
            return Observation(pm, v.disc_mask, c)

        def loss_of(img_a, img_b):
            r = SmoothPointmapVictim().pointmaps(replace(va, image=img_a),
                                                 replace(vb, image=img_b))
            return poc_loss(obs(va, r.pointmap_a), obs(vb, r.pointmap_b)).total

        rng = np.random.default_rng(3)
        eps = 1e-5
        fd, an = [], []
        for _ in range(5):
            y, x, c = rng.integers(20, 70), rng.integers(20, 70), rng.integers(0, 3)
            hi = va.image.copy()
            hi[y, x, c] += eps
            lo = va.image.copy()
            lo[y, x, c] -= eps
            fd.append((loss_of(hi, vb.image) - loss_of(lo, vb.image)) / (2 * eps))
            an.append(res.grad_a[y, x, c])
        fd, an = np.array(fd), np.array(an)
        cos = float(fd @ an / (np.linalg.norm(fd) * np.linalg.norm(an) + 1e-30))
        assert cos > 0.99
