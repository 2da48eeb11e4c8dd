"""Built-in texture-sensitive two-view pose estimator.

Keypoints are the strongest-gradient pixels inside the first view's disc
mask; each is matched by zero-normalized cross-correlation of an RGB window
against the second view. A robust four-point homography over the matches is
decomposed with the known ground-plane normal into a relative pose, from
which plane-intersection pointmaps are produced in the first camera's frame
(the same output convention a pointmap-regression network uses, so the
consistency loss consumes them unchanged).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .disc import _homography_dlt, apply_homography
from .errors import (EstimationFailedError, InsufficientMatchesError,
                     InvalidInputError)
from .scene import Pointmap

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Match:
    point_a: np.ndarray  # (x, y) pixel in view a
    point_b: np.ndarray  # (x, y) pixel in view b
    score: float


@dataclass(frozen=True)
class VictimConfig:
    match_count: int = 64
    window: int = 11
    min_score: float = 0.5
    search_radius: Optional[float] = None  # None searches the whole image
    min_separation: int = 5
    inlier_px: float = 2.0
    ransac_iters: int = 200
    # The disc rim is viewpoint-invariant (the boundary does not move when
    # the camera orbits), so rim windows would self-match; keypoints stay
    # this many pixels inside the mask.
    rim_margin: int = 9


@dataclass(frozen=True)
class PlaneInCamera:
    """Plane n . X = d in a camera frame, with d > 0 toward the scene."""

    normal: np.ndarray
    dist: float


def plane_in_camera(pose):
    """The world ground plane y = 0 expressed in this camera's frame."""
    n = pose.rotation @ np.array([0.0, 1.0, 0.0])
    d = float(n @ pose.translation)
    if d < 0:
        n, d = -n, -d
    return PlaneInCamera(n, d)


@dataclass(frozen=True)
class EstimatedRelPose:
    """Relative pose a->b (X_b = R X_a + t) with unit translation direction."""

    rotation: np.ndarray
    translation_dir: np.ndarray
    inlier_count: int
    homography: np.ndarray
    t_over_d: np.ndarray
    pure_rotation: bool


def erode_mask(mask, radius):
    """Shrink a boolean mask: keep pixels whose full (2r+1) box is inside."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask
    m = mask.astype(np.float64)
    c = np.pad(m, ((1, 0), (1, 0))).cumsum(axis=0).cumsum(axis=1)
    H, W = mask.shape
    y0 = np.clip(np.arange(H) - radius, 0, H)
    y1 = np.clip(np.arange(H) + radius + 1, 0, H)
    x0 = np.clip(np.arange(W) - radius, 0, W)
    x1 = np.clip(np.arange(W) + radius + 1, 0, W)
    area = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    s = (c[np.ix_(y1, x1)] - c[np.ix_(y1, x0)]
         - c[np.ix_(y0, x1)] + c[np.ix_(y0, x0)])
    return (s >= area - 0.5) & mask


def _select_keypoints(strength, mask, count, margin, min_sep):
    cand = np.array(strength)
    cand[~mask] = 0.0
    cand[:margin, :] = 0.0
    cand[-margin:, :] = 0.0
    cand[:, :margin] = 0.0
    cand[:, -margin:] = 0.0
    flat = cand.ravel()
    order = np.argsort(flat)[::-1]
    order = order[flat[order] > 1e-9][:4096]
    W = strength.shape[1]
    picked = []
    sep2 = float(min_sep) ** 2
    for f in order:
        y, x = divmod(int(f), W)
        ok = True
        for (px, py) in picked:
            if (px - x) ** 2 + (py - y) ** 2 < sep2:
                ok = False
                break
        if ok:
            picked.append((x, y))
            if len(picked) >= count:
                break
    return picked


def _centroid_snap(strength, x, y, margin, H, W, radius=4):
    """Move a keypoint to the gradient-energy centroid of its neighborhood.

    Edge responses of an isotropic feature form a ring; its centroid is the
    feature center, which stays put under in-image rotation while the ring
    argmax does not.
    """
    y0, y1 = max(0, y - radius), min(H, y + radius + 1)
    x0, x1 = max(0, x - radius), min(W, x + radius + 1)
    w = strength[y0:y1, x0:x1].astype(np.float64) ** 2
    total = w.sum()
    if total <= 0:
        return x, y
    ys = (w.sum(axis=1) @ np.arange(y0, y1)) / total
    xs = (w.sum(axis=0) @ np.arange(x0, x1)) / total
    xi = int(round(min(max(xs, margin), W - 1 - margin)))
    yi = int(round(min(max(ys, margin), H - 1 - margin)))
    return xi, yi


def detect_and_match(img_a, img_b, disc_mask_a, count, config=VictimConfig()):
    """Match the ``count`` strongest-gradient disc pixels of view a into view b.

    Matching maximizes zero-normalized cross-correlation of RGB windows;
    matches scoring below the threshold are dropped and fewer than 8
    survivors raise InsufficientMatchesError.
    """
    if count < 8:
        raise InvalidInputError("need at least 8 keypoints")
    img_a = np.asarray(img_a, dtype=np.float32)
    img_b = np.asarray(img_b, dtype=np.float32)
    H, W = img_a.shape[:2]
    half = config.window // 2

    gray = img_a @ LUMA.astype(np.float32)
    gy, gx = np.gradient(gray)
    strength = np.hypot(gx, gy)
    kp_mask = erode_mask(disc_mask_a, config.rim_margin)
    if not kp_mask.any():
        kp_mask = np.asarray(disc_mask_a, dtype=bool)
    keypoints = _select_keypoints(strength, kp_mask,
                                  count, half + 1, config.min_separation)
    keypoints = [_centroid_snap(strength, x, y, half + 1, H, W)
                 for x, y in keypoints]
    if len(keypoints) < 8:
        raise InsufficientMatchesError(
            f"only {len(keypoints)} usable keypoints in the disc region")

    win = config.window
    dim = win * win * 3

    # Templates, zero-meaned and unit-normalized.
    templates = np.empty((len(keypoints), dim), dtype=np.float32)
    for k, (x, y) in enumerate(keypoints):
        patch = img_a[y - half:y + half + 1, x - half:x + half + 1, :]
        templates[k] = patch.ravel()
    templates -= templates.mean(axis=1, keepdims=True)
    t_norm = np.linalg.norm(templates, axis=1)

    # All candidate windows of view b as rows; their means cancel against the
    # zero-mean templates, so only per-window norms are needed.
    from numpy.lib.stride_tricks import sliding_window_view
    wins = sliding_window_view(img_b, (win, win, 3)).reshape(-1, dim)
    sums = wins.sum(axis=1)
    sq = np.einsum("ij,ij->i", wins, wins)
    w_norm = np.sqrt(np.maximum(sq - sums * sums / dim, 0.0))

    scores = wins @ templates.T  # (positions, keypoints)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores /= w_norm[:, None]
        scores /= t_norm[None, :]
    scores[~np.isfinite(scores)] = -1.0

    ph, pw = H - win + 1, W - win + 1
    matches = []
    for k, (x, y) in enumerate(keypoints):
        if t_norm[k] <= 1e-12:
            continue
        col = scores[:, k].reshape(ph, pw)
        if config.search_radius is not None:
            r = config.search_radius
            cy = np.arange(ph) + half
            cx = np.arange(pw) + half
            far = ((cx[None, :] - x) ** 2 + (cy[:, None] - y) ** 2) > r * r
            col = np.where(far, -1.0, col)
        best = int(np.argmax(col))
        by, bx = divmod(best, pw)
        s = float(col[by, bx])
        if s >= config.min_score:
            dx, dy = _subpixel_peak(col, by, bx)
            matches.append(Match(np.array([x, y], dtype=float),
                                 np.array([bx + half + dx, by + half + dy]), s))
    if len(matches) < 8:
        raise InsufficientMatchesError(f"only {len(matches)} matches above threshold")
    return matches


def _subpixel_peak(col, by, bx):
    """Parabolic refinement of a correlation peak, clamped to one pixel."""
    ph, pw = col.shape
    dx = dy = 0.0
    if 0 < bx < pw - 1:
        l, c, r = col[by, bx - 1], col[by, bx], col[by, bx + 1]
        den = l - 2 * c + r
        if den < 0:
            dx = float(np.clip(0.5 * (l - r) / den, -1.0, 1.0))
    if 0 < by < ph - 1:
        u, c, d = col[by - 1, bx], col[by, bx], col[by + 1, bx]
        den = u - 2 * c + d
        if den < 0:
            dy = float(np.clip(0.5 * (u - d) / den, -1.0, 1.0))
    return dx, dy


def _plane_basis(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    v1 = seed - n * (n @ seed)
    v1 /= np.linalg.norm(v1)
    v2 = np.cross(n, v1)  # (v1, v2, n) is right-handed
    return n, v1, v2


def _project_so3(M):
    u, _, vt = np.linalg.svd(M)
    R = u @ vt
    if np.linalg.det(R) < 0:
        R = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return R


def estimate_pose(matches, intrinsics, plane_normal, config=VictimConfig(), seed=0):
    """Robust homography + known-plane decomposition into a relative pose.

    ``plane_normal`` is the scene plane normal in the first camera's frame
    (unit length, pointing so that plane points have positive offset).
    """
    if len(matches) < 8:
        raise InvalidInputError("need at least 8 matches")
    pa = np.stack([m.point_a for m in matches])
    pb = np.stack([m.point_b for m in matches])
    rng = np.random.default_rng(seed)
    n_m = len(matches)

    best_count, best_inliers = -1, None
    for _ in range(max(1, config.ransac_iters)):
        idx = rng.choice(n_m, size=4, replace=False)
        try:
            H = _homography_dlt(pa[idx], pb[idx])
        except np.linalg.LinAlgError:
            continue
        with np.errstate(all="ignore"):
            proj = apply_homography(H, pa)
            err = np.linalg.norm(proj - pb, axis=1)
        inl = np.isfinite(err) & (err < config.inlier_px)
        c = int(inl.sum())
        if c > best_count:
            best_count, best_inliers = c, inl
    if best_count < 8:
        raise EstimationFailedError(
            f"consensus too small: {best_count} inliers of {n_m} matches")

    H_pix = _homography_dlt(pa[best_inliers], pb[best_inliers])
    # One re-gate pass: the all-inlier fit usually widens the consensus.
    err = np.linalg.norm(apply_homography(H_pix, pa) - pb, axis=1)
    regated = np.isfinite(err) & (err < config.inlier_px)
    if regated.sum() >= best_count:
        best_inliers, best_count = regated, int(regated.sum())
        H_pix = _homography_dlt(pa[best_inliers], pb[best_inliers])
    K = np.array([[intrinsics.fx, 0.0, intrinsics.cx],
                  [0.0, intrinsics.fy, intrinsics.cy],
                  [0.0, 0.0, 1.0]])
    Kinv = np.linalg.inv(K)
    Hn = Kinv @ H_pix @ K

    # Rays of the inlier matches in normalized camera coordinates.
    xa = np.concatenate([(pa[best_inliers] - [intrinsics.cx, intrinsics.cy])
                         / [intrinsics.fx, intrinsics.fy],
                         np.ones((best_count, 1))], axis=1)
    w3 = xa @ Hn[2]
    if np.median(w3) < 0:
        Hn = -Hn

    n, v1, v2 = _plane_basis(plane_normal)
    candidates = []
    for s in (1.0, -1.0):
        lam = 2.0 * s / (np.linalg.norm(Hn @ v1) + np.linalg.norm(Hn @ v2))
        M = lam * Hn
        b1, b2 = M @ v1, M @ v2
        b3 = np.cross(b1, b2)
        nb3 = np.linalg.norm(b3)
        if nb3 < 1e-12:
            continue
        R = _project_so3(np.column_stack([b1, b2, b3 / nb3])
                         @ np.column_stack([v1, v2, n]).T)
        t_over_d = (M - R) @ n
        denom = xa @ n
        Xa = xa / np.where(np.abs(denom) < 1e-12, np.nan, denom)[:, None]
        Xb = Xa @ R.T + t_over_d
        good = int(np.sum((denom > 0) & np.isfinite(Xb[:, 2]) & (Xb[:, 2] > 0)))
        candidates.append((good, -s, R, t_over_d))
    if not candidates:
        raise EstimationFailedError("homography decomposition degenerated")
    _, _, R, t_over_d = max(candidates, key=lambda c: (c[0], c[1]))

    t_norm = float(np.linalg.norm(t_over_d))
    pure = t_norm < 1e-9
    t_dir = np.zeros(3) if pure else t_over_d / t_norm
    return EstimatedRelPose(R, t_dir, best_count, H_pix, t_over_d, pure)


def pointmaps_from_estimate(est, intrinsics, plane, shape=None):
    """Plane-intersection pointmaps for both views, in the first camera frame.

    The plane is given in the first camera's frame; the second view's plane
    follows from the estimated relative pose. Raises EstimationFailedError
    when either plane ends up behind its camera.
    """
    H = shape[0] if shape else intrinsics.height
    W = shape[1] if shape else intrinsics.width
    if plane.dist <= 0:
        raise EstimationFailedError("plane behind the first camera")
    n_a = plane.normal / np.linalg.norm(plane.normal)
    d_a = float(plane.dist)
    n_b = est.rotation @ n_a
    d_b = d_a * (1.0 + float(n_b @ est.t_over_d))
    if d_b <= 0:
        raise EstimationFailedError("plane behind the second camera")
    t = est.t_over_d * d_a

    u = np.arange(W, dtype=float)
    v = np.arange(H, dtype=float)
    rays = np.stack([
        np.broadcast_to((u[None, :] - intrinsics.cx) / intrinsics.fx, (H, W)),
        np.broadcast_to((v[:, None] - intrinsics.cy) / intrinsics.fy, (H, W)),
        np.ones((H, W)),
    ], axis=-1)

    def intersect(normal, dist):
        denom = rays @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = dist / denom
        valid = np.isfinite(s) & (s > 0)
        coords = np.where(valid[..., None], s[..., None] * rays, 0.0)
        return coords, valid

    coords_a, valid_a = intersect(n_a, d_a)
    coords_b_own, valid_b = intersect(n_b, d_b)
    coords_b = np.where(valid_b[..., None],
                        (coords_b_own - t) @ est.rotation, 0.0)
    if not (valid_a.any() and valid_b.any()):
        raise EstimationFailedError("estimated plane not visible from the cameras")
    return Pointmap(coords_a, valid_a), Pointmap(coords_b, valid_b)


@dataclass(frozen=True)
class VictimResult:
    pointmap_a: Pointmap
    pointmap_b: Pointmap
    estimate: Optional[EstimatedRelPose] = None
    grad_a: Optional[np.ndarray] = None
    grad_b: Optional[np.ndarray] = None


class BuiltinVictim:
    """Two-view victim: images in, pointmaps in the first camera frame out."""

    name = "builtin"
    provides_gradients = False

    def __init__(self, config=VictimConfig()):
        self.config = config

    def pointmaps(self, view_a, view_b, seed=0):
        matches = detect_and_match(view_a.image, view_b.image, view_a.disc_mask,
                                   self.config.match_count, self.config)
        plane = plane_in_camera(view_a.pose)
        est = estimate_pose(matches, view_a.intrinsics, plane.normal,
                            self.config, seed)
        pm_a, pm_b = pointmaps_from_estimate(est, view_a.intrinsics, plane)
        return VictimResult(pm_a, pm_b, est)


def _gaussian_kernel(sigma):
    r = max(1, int(round(3.0 * sigma)))
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-x * x / (2.0 * sigma * sigma))
    return k / k.sum()


def blur2d(field, sigma):
    """Separable zero-padded Gaussian blur (self-adjoint)."""
    k = _gaussian_kernel(sigma)
    r = len(k) // 2
    H, W = field.shape
    pad = np.zeros((H + 2 * r, W))
    pad[r:r + H] = field
    rows = np.empty_like(field)
    for j in range(W):
        rows[:, j] = np.convolve(pad[:, j], k, mode="valid")
    pad = np.zeros((H, W + 2 * r))
    pad[:, r:r + W] = rows
    out = np.empty_like(field)
    for i in range(H):
        out[i] = np.convolve(pad[i], k, mode="valid")
    return out


_FEATURE_FREQS = ((0.130, 0.047), (0.031, -0.122))


class SmoothPointmapVictim:
    """Differentiable stand-in for a pointmap-regression network.

    Each view's blurred luminance over the disc region is projected onto
    two fixed spatial patterns (the analogue of a network's frozen random
    weights, deliberately not rotation-equivariant); the feature angle is
    the view's orientation belief and the belief difference spins the
    second view's plane pointmap. The outputs respond smoothly to image
    content, so consistency losses have usable gradients; with
    ``gradients=True`` exact input-image gradients come back alongside the
    pointmaps. The exchange-bridge reference model serves this same
    function.
    """

    name = "smooth"

    def __init__(self, blur_sigma=5.0, gradients=False, sensitive=True):
        self.blur_sigma = blur_sigma
        self.gradients = gradients
        self.sensitive = sensitive

    @property
    def provides_gradients(self):
        return self.gradients

    def _patterns(self, shape):
        H, W = shape
        u = np.arange(W, dtype=float)[None, :]
        v = np.arange(H, dtype=float)[:, None]
        return [np.cos(fu * u + fv * v) for fu, fv in _FEATURE_FREQS]

    @staticmethod
    def _radial_bins(mask, nbins=16):
        """Bin mask pixels by normalized elliptical radius (from the mask's
        own second moments), so concentric structure can be removed."""
        ys, xs = np.nonzero(mask)
        pts = np.stack([xs, ys], axis=1).astype(float)
        c = pts.mean(axis=0)
        d = pts - c
        cov = d.T @ d / len(pts)
        ir = np.linalg.inv(cov + 1e-9 * np.eye(2))
        r2 = np.einsum("ni,ij,nj->n", d, ir, d)
        r = np.sqrt(np.maximum(r2, 0.0))
        edges = np.linspace(0.0, r.max() + 1e-9, nbins + 1)
        return ys, xs, np.clip(np.digitize(r, edges) - 1, 0, nbins - 1), nbins

    def _residual_op(self, view):
        """Linear self-adjoint operator removing per-radial-band means over
        the disc mask; returns (apply, mask_float)."""
        mask = np.asarray(view.disc_mask, dtype=bool)
        ys, xs, bins, nbins = self._radial_bins(mask)
        counts = np.bincount(bins, minlength=nbins).astype(float)

        def apply(field):
            vals = field[ys, xs]
            sums = np.bincount(bins, weights=vals, minlength=nbins)
            means = sums / np.maximum(counts, 1.0)
            out = np.zeros_like(field)
            out[ys, xs] = vals - means[bins]
            return out

        return apply

    def _features(self, view):
        luma = np.asarray(view.image, dtype=float) @ LUMA
        z = blur2d(luma - 0.5, self.blur_sigma)
        residual = self._residual_op(view)
        zr = residual(z)
        p1, p2 = self._patterns(z.shape)
        f = np.array([float((p1 * zr).sum()), float((p2 * zr).sum())])
        return f, residual, (p1, p2)

    def _spin_estimate(self, view_a, view_b):
        fa, res_a, pats_a = self._features(view_a)
        fb, res_b, pats_b = self._features(view_b)
        na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
        if not self.sensitive or na < 1e-12 or nb < 1e-12:
            return 0.0, None, None
        theta_a = np.arctan2(fa[1], fa[0])
        theta_b = np.arctan2(fb[1], fb[0])
        psi = float((theta_b - theta_a + np.pi) % (2 * np.pi) - np.pi)

        def dtheta_dimage(f, residual, pats):
            p1, p2 = pats
            dzr = (-f[1] * p1 + f[0] * p2) / float(f @ f)
            dz = residual(dzr)  # band-mean removal is self-adjoint
            dluma = blur2d(dz, self.blur_sigma)
            return dluma[:, :, None] * LUMA[None, None, :]

        return (psi,
                dtheta_dimage(fa, res_a, pats_a),
                dtheta_dimage(fb, res_b, pats_b))

    def _maps_for_spin(self, view_a, psi):
        plane = plane_in_camera(view_a.pose)
        R = _rotation_about(plane.normal, psi)
        est = EstimatedRelPose(R, np.zeros(3), 0, np.eye(3), np.zeros(3), True)
        return pointmaps_from_estimate(est, view_a.intrinsics, plane)

    def pointmaps(self, view_a, view_b, seed=0):
        psi, dth_a, dth_b = self._spin_estimate(view_a, view_b)
        pm_a, pm_b = self._maps_for_spin(view_a, psi)
        grad_a = grad_b = None
        if self.gradients:
            if dth_a is None:
                grad_a = np.zeros_like(np.asarray(view_a.image, dtype=float))
                grad_b = np.zeros_like(np.asarray(view_b.image, dtype=float))
            else:
                from .loss import Observation, poc_loss_gradients
                from .pose import project, world_to_camera

                def obs(view, pm):
                    center = project(view.intrinsics,
                                     world_to_camera(view.pose, np.zeros(3)))
                    return Observation(pm, view.disc_mask, center)

                _, _, g_pb = poc_loss_gradients(obs(view_a, pm_a),
                                                obs(view_b, pm_b))
                h = 1e-6
                _, pm_b_hi = self._maps_for_spin(view_a, psi + h)
                _, pm_b_lo = self._maps_for_spin(view_a, psi - h)
                dpm = (pm_b_hi.coords - pm_b_lo.coords) / (2 * h)
                dl_dpsi = float((g_pb * dpm).sum())
                grad_a = -dl_dpsi * dth_a
                grad_b = dl_dpsi * dth_b
        return VictimResult(pm_a, pm_b, grad_a=grad_a, grad_b=grad_b)


def _rotation_about(axis, angle):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
