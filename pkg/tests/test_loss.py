import math

import numpy as np
import pytest

from kaleidisc.disc import DiscImage, disc_mask
from kaleidisc.errors import (DegenerateRegionError, DegenerateSplitError)
from kaleidisc.loss import (BisectionLine, Observation, average_flow_direction,
                            bisect, coordinate_variation, flow_direction,
                            flow_weight_field, oc_loss, poc_loss,
                            poc_loss_gradients, verify_projection_correspondence)
from kaleidisc.pose import (CameraPose, Intrinsics, look_at_pose,
                            rotation_about_axis)
from kaleidisc.scene import Pointmap, SceneConfig, render_view, sample_viewpoint


def circle_mask(r, pad=2):
    n = 2 * (r + pad) + 1
    c = np.arange(n) - (n - 1) / 2.0
    return (c[None, :] ** 2 + c[:, None] ** 2) <= r * r


def brute_delta(channel, mask, center, normal):
    """Oracle: split means by explicit per-pixel loops."""
    s1, s2, n1, n2 = 0.0, 0.0, 0, 0
    H, W = mask.shape
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            side = (x - center[0]) * normal[0] + (y - center[1]) * normal[1]
            if side > 0:
                s2 += channel[y, x]
                n2 += 1
            else:
                s1 += channel[y, x]
                n1 += 1
    return s2 / n2 - s1 / n1


class TestBisect:
    def test_vertical_split_balanced(self):
        mask = circle_mask(30)
        c = (mask.shape[1] - 1) / 2.0
        split = bisect(mask, (c, c), BisectionLine(0.0))
        # Brute-force count oracle.
        total = mask.sum()
        assert len(split.m1) + len(split.m2) == total
        assert abs(len(split.m1) - len(split.m2)) <= 61  # one column's worth

    def test_single_pixel_degenerate(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        with pytest.raises(DegenerateSplitError):
            bisect(mask, (2.0, 2.0), BisectionLine(0.0))

    def test_flipping_normal_swaps_sides(self):
        mask = circle_mask(10)
        c = (mask.shape[1] - 1) / 2.0
        a = bisect(mask, (c, c), BisectionLine(0.3))
        b = bisect(mask, (c, c), BisectionLine(0.3 + math.pi))
        # Same line, opposite normal: M1/M2 swap up to boundary pixels.
        assert abs(len(a.m1) - len(b.m2)) <= mask.shape[0]


class TestCoordinateVariation:
    def test_constant_channel_zero(self):
        mask = circle_mask(12)
        c = (mask.shape[1] - 1) / 2.0
        split = bisect(mask, (c, c), BisectionLine(0.0))
        assert coordinate_variation(np.full(mask.shape, 3.3), split) == 0.0

    def test_linear_field_matches_brute_force_and_continuum(self):
        r = 30
        mask = circle_mask(r)
        c = (mask.shape[1] - 1) / 2.0
        channel = np.broadcast_to(np.arange(mask.shape[1], dtype=float),
                                  mask.shape)  # values = x pixel coordinate
        split = bisect(mask, (c, c), BisectionLine(0.0))
        got = coordinate_variation(channel, split)
        oracle = brute_delta(channel, mask, (c, c), (1.0, 0.0))
        assert got == pytest.approx(oracle, abs=1e-12)
        assert got == pytest.approx(8 * r / (3 * math.pi), rel=0.02)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        mask = circle_mask(15)
        c = (mask.shape[1] - 1) / 2.0
        split = bisect(mask, (c, c), BisectionLine(0.7))
        f = rng.normal(size=mask.shape)
        g = rng.normal(size=mask.shape)
        lhs = coordinate_variation(2.5 * f - 1.5 * g, split)
        rhs = (2.5 * coordinate_variation(f, split)
               - 1.5 * coordinate_variation(g, split))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_negation(self):
        rng = np.random.default_rng(1)
        mask = circle_mask(15)
        c = (mask.shape[1] - 1) / 2.0
        split = bisect(mask, (c, c), BisectionLine(1.2))
        f = rng.normal(size=mask.shape)
        assert coordinate_variation(-f, split) == pytest.approx(
            -coordinate_variation(f, split), abs=1e-12)

    def test_invalid_pixels_masked(self):
        mask = circle_mask(10)
        c = (mask.shape[1] - 1) / 2.0
        split = bisect(mask, (c, c), BisectionLine(0.0))
        channel = np.ones(mask.shape)
        valid = np.zeros(mask.shape, dtype=bool)  # everything invalid
        with pytest.raises(DegenerateSplitError):
            coordinate_variation(channel, split, valid)


class TestFlowDirection:
    def test_linear_field_along_x(self):
        r = 30
        mask = circle_mask(r)
        c = (mask.shape[1] - 1) / 2.0
        channel = np.broadcast_to(np.arange(mask.shape[1], dtype=float),
                                  mask.shape)
        tau = flow_direction(channel, mask, (c, c), BisectionLine(0.0))
        expect = 8 * r / (3 * math.pi)
        assert tau[0] == pytest.approx(expect, rel=0.02)
        assert abs(tau[1]) < 1e-9

    def test_constant_field(self):
        mask = circle_mask(10)
        c = (mask.shape[1] - 1) / 2.0
        tau = flow_direction(np.full(mask.shape, 2.0), mask, (c, c),
                             BisectionLine(0.5))
        np.testing.assert_allclose(tau, [0, 0], atol=1e-12)

    def test_rotating_field_rotates_tau(self):
        r = 40
        mask = circle_mask(r)
        c = (mask.shape[1] - 1) / 2.0
        xs = np.arange(mask.shape[1], dtype=float)[None, :] - c
        ys = np.arange(mask.shape[0], dtype=float)[:, None] - c
        line = BisectionLine(0.0)
        tau_x = flow_direction(np.broadcast_to(xs, mask.shape), mask, (c, c), line)
        tau_y = flow_direction(np.broadcast_to(ys, mask.shape), mask, (c, c), line)
        # The y-ramp is the x-ramp rotated by 90 degrees.
        rotated = np.array([-tau_x[1], tau_x[0]])
        assert np.linalg.norm(tau_y - rotated) < 0.02 * np.linalg.norm(tau_x)


class TestAverageFlowDirection:
    def test_constant_zero(self):
        mask = circle_mask(10)
        c = (mask.shape[1] - 1) / 2.0
        tau = average_flow_direction(np.full(mask.shape, 5.0), mask, (c, c))
        np.testing.assert_allclose(tau, [0, 0], atol=1e-12)

    def test_linear_field_parallel_to_gradient(self):
        r = 40
        mask = circle_mask(r)
        c = (mask.shape[1] - 1) / 2.0
        g = np.array([0.6, -0.8])
        xs = np.arange(mask.shape[1], dtype=float)[None, :]
        ys = np.arange(mask.shape[0], dtype=float)[:, None]
        channel = g[0] * xs + g[1] * ys
        tau = average_flow_direction(np.broadcast_to(channel, mask.shape),
                                     mask, (c, c))
        ang = math.degrees(math.acos(
            float(tau @ g) / (np.linalg.norm(tau) * np.linalg.norm(g))))
        assert ang < 3.0

    def test_matches_single_line_for_linear_field(self):
        r = 35
        mask = circle_mask(r)
        c = (mask.shape[1] - 1) / 2.0
        xs = np.arange(mask.shape[1], dtype=float)[None, :]
        channel = np.broadcast_to(xs, mask.shape)
        tau1 = flow_direction(channel, mask, (c, c), BisectionLine(0.0))
        tau3 = average_flow_direction(channel, mask, (c, c))
        assert np.linalg.norm(tau3 - tau1) < 0.02 * np.linalg.norm(tau1)

    def test_occlusion_robustness_paired_render(self):
        # Oracle: the same view rendered with and without a box occluder
        # that hides ~40% of the disc; flow directions stay aligned.
        from kaleidisc.scene import Occluder
        tex = np.full((128, 128, 3), 0.5)
        pose = look_at_pose(2.2, 65.0, 40.0)
        intr = Intrinsics.centered(96, 105.0)
        clear = render_view(SceneConfig(DiscImage.from_array(tex), 1.0),
                            pose, intr)
        occ = Occluder(center=[0.0, -0.2, 0.0], extents=[1.0, 0.4, 1.0],
                       albedo=[0.8, 0.2, 0.2])
        blocked = render_view(SceneConfig(DiscImage.from_array(tex), 1.0,
                                          occluder=occ), pose, intr)
        frac = blocked.disc_mask.sum() / clear.disc_mask.sum()
        assert 0.45 < frac < 0.75
        ca = Observation.from_view(clear).resolved_center()
        for i in range(3):
            tau_full = average_flow_direction(clear.pointmap.coords[:, :, i],
                                              clear.disc_mask, ca)
            tau_occ = average_flow_direction(blocked.pointmap.coords[:, :, i],
                                             blocked.disc_mask, ca)
            ang = math.degrees(math.acos(np.clip(
                float(tau_full @ tau_occ) / (np.linalg.norm(tau_full)
                                             * np.linalg.norm(tau_occ)),
                -1, 1)))
            assert ang < 10.0

    def test_all_degenerate_raises(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        with pytest.raises(DegenerateRegionError):
            average_flow_direction(np.ones(mask.shape), mask, (2.0, 2.0))


def make_obs(coords, mask, center=None, valid=None):
    coords = np.asarray(coords, dtype=float)
    if valid is None:
        valid = np.ones(coords.shape[:2], dtype=bool)
    return Observation(Pointmap(coords, valid), mask, center)


class TestPocLoss:
    def _random_obs(self, seed, r=20):
        rng = np.random.default_rng(seed)
        mask = circle_mask(r)
        n = mask.shape[0]
        c = (n - 1) / 2.0
        xs = np.arange(n, dtype=float)[None, :]
        ys = np.arange(n, dtype=float)[:, None]
        coords = np.stack([
            0.01 * xs + 0.002 * ys + rng.normal(0, 0.001, (n, n)),
            0.004 * xs - 0.008 * ys + rng.normal(0, 0.001, (n, n)),
            -0.006 * xs + 0.003 * ys + rng.normal(0, 0.001, (n, n)),
        ], axis=-1)
        return make_obs(coords, mask, (c, c))

    def test_identical_inputs_give_three(self):
        obs = self._random_obs(0)
        value = poc_loss(obs, obs)
        assert value.total == pytest.approx(3.0, abs=1e-9)
        assert value.degenerate == (False, False, False)

    def test_negated_flows_give_minus_three(self):
        obs = self._random_obs(1)
        neg = make_obs(-obs.pointmap.coords, obs.disc_mask, obs.center)
        assert poc_loss(obs, neg).total == pytest.approx(-3.0, abs=1e-9)

    def test_symmetry_exact(self):
        a, b = self._random_obs(2), self._random_obs(3)
        assert poc_loss(a, b).total == poc_loss(b, a).total

    def test_scale_invariance(self):
        a, b = self._random_obs(4), self._random_obs(5)
        scaled = make_obs(7.3 * b.pointmap.coords, b.disc_mask, b.center)
        assert poc_loss(a, scaled).total == pytest.approx(
            poc_loss(a, b).total, abs=1e-12)

    def test_degenerate_channel_contributes_zero(self):
        a = self._random_obs(6)
        coords = a.pointmap.coords.copy()
        coords[:, :, 1] = 42.0  # constant: zero flow, degenerate
        b = make_obs(coords, a.disc_mask, a.center)
        value = poc_loss(a, b)
        assert value.degenerate[1]
        assert value.per_channel[1] == 0.0

    def test_antipodal_render_pair(self):
        tex = np.full((128, 128, 3), 0.5)
        scene = SceneConfig(DiscImage.from_array(tex), 1.0)
        intr = Intrinsics.centered(64, 70.0)
        va = render_view(scene, look_at_pose(2.4, 75.0, 0.0), intr)
        vb = render_view(scene, look_at_pose(2.4, 75.0, 180.0), intr)
        assert poc_loss(va, vb).total < -2.7

    def test_identical_views_render(self):
        tex = np.full((128, 128, 3), 0.5)
        scene = SceneConfig(DiscImage.from_array(tex), 1.0)
        intr = Intrinsics.centered(64, 70.0)
        v = render_view(scene, look_at_pose(2.0, 60.0, 30.0), intr)
        assert poc_loss(v, v).total == pytest.approx(3.0, abs=1e-9)

    def test_identical_orientation_translated(self):
        tex = np.full((128, 128, 3), 0.5)
        scene = SceneConfig(DiscImage.from_array(tex), 1.0)
        intr = Intrinsics.centered(64, 70.0)
        rng = np.random.default_rng(8)
        for _ in range(5):
            d, p, y = sample_viewpoint(rng)
            pa = look_at_pose(d, p, y)
            shift = rng.uniform(-0.25, 0.25, size=3) * [1, 0, 1]
            pb = CameraPose(pa.rotation, pa.translation - pa.rotation @ shift)
            va = render_view(scene, pa, intr)
            vb = render_view(scene, pb, intr)
            assert poc_loss(va, vb).total >= 2.9


class TestOcLoss:
    def test_same_rotation(self):
        R = rotation_about_axis([1, 0, 2], 0.8)
        assert oc_loss(R, R) == pytest.approx(3.0, abs=1e-12)

    def test_z_flip(self):
        R = rotation_about_axis([0, 1, 1], 0.5)
        flipped = R @ rotation_about_axis([0, 0, 1], math.pi)
        assert oc_loss(R, flipped) == pytest.approx(-1.0, abs=1e-9)

    def test_bounds_over_random_rotations(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            Ra = rotation_about_axis(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            Rb = rotation_about_axis(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            v = oc_loss(Ra, Rb)
            assert -1.0 - 1e-9 <= v <= 3.0 + 1e-9


class TestGradients:
    def test_weight_field_matches_average_flow(self):
        rng = np.random.default_rng(10)
        mask = circle_mask(18)
        c = (mask.shape[1] - 1) / 2.0
        w = flow_weight_field(mask, (c, c))
        channel = rng.normal(size=mask.shape)
        tau_ref = average_flow_direction(channel, mask, (c, c))
        tau_lin = np.einsum("hwk,hw->k", w, channel)
        np.testing.assert_allclose(tau_lin, tau_ref, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        mask = circle_mask(12)
        n = mask.shape[0]
        c = (n - 1) / 2.0
        coords_a = rng.normal(size=(n, n, 3))
        coords_b = rng.normal(size=(n, n, 3))
        a = make_obs(coords_a, mask, (c, c))
        b = make_obs(coords_b, mask, (c, c))
        value, ga, gb = poc_loss_gradients(a, b)
        assert value.total == pytest.approx(poc_loss(a, b).total, abs=1e-12)
        eps = 1e-6
        ys, xs = np.nonzero(mask)
        for k in (0, 7, 31):
            y, x = ys[k], xs[k]
            ch = k % 3
            for coords, grad, other, first in ((coords_a, ga, b, True),
                                               (coords_b, gb, a, False)):
                hi = coords.copy()
                hi[y, x, ch] += eps
                lo = coords.copy()
                lo[y, x, ch] -= eps
                obs_hi = make_obs(hi, mask, (c, c))
                obs_lo = make_obs(lo, mask, (c, c))
                if first:
                    fd = (poc_loss(obs_hi, other).total
                          - poc_loss(obs_lo, other).total) / (2 * eps)
                else:
                    fd = (poc_loss(other, obs_hi).total
                          - poc_loss(other, obs_lo).total) / (2 * eps)
                assert grad[y, x, ch] == pytest.approx(fd, abs=1e-6)


class TestVerifyProjectionCorrespondence:
    def test_zero_pairs_flags_insufficiency(self):
        tex = np.full((64, 64, 3), 0.5)
        scene = SceneConfig(DiscImage.from_array(tex), 1.0)
        intr = Intrinsics.centered(48, 52.0)
        report = verify_projection_correspondence([], scene, intr)
        assert report.pairs_total == 0
        assert all(ch.insufficient for ch in report.channels)

    def test_small_run_reports_channels(self):
        tex = np.full((64, 64, 3), 0.5)
        scene = SceneConfig(DiscImage.from_array(tex), 1.0)
        intr = Intrinsics.centered(48, 52.0)
        rng = np.random.default_rng(12)
        pairs = []
        for _ in range(8):
            da, pa_, ya = sample_viewpoint(rng)
            db, pb_, yb = sample_viewpoint(rng)
            pairs.append((look_at_pose(da, pa_, ya), look_at_pose(db, pb_, yb)))
        report = verify_projection_correspondence(pairs, scene, intr)
        for ch in report.channels:
            assert ch.used == 8
            assert ch.insufficient  # below the 30-pair floor
            assert ch.pearson == ch.pearson  # computed, not NaN
