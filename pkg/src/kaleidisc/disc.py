"""N-fold radially symmetric disc construction from a single wedge segment.

A disc of pixel radius ``rho`` is tiled by ``N`` copies of one rectangular
segment image. Copy ``n`` is placed by the exact perspective map sending the
segment rectangle onto the rectangle circumscribing wedge ``n``; every
in-disc pixel is painted through the single map of the wedge that contains
it, so the N copies form a partition with no seam double-counting.

Conventions: the first array axis (rows) carries the ``x`` coordinate of the
disc frame, the second axis (columns) carries ``y``. Pixel ``(i, j)`` has
its center at continuous coordinate ``(i + 0.5, j + 0.5)``; the disc center
sits at the image center.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DiscSpecError, SingularConfigurationError

TWO_PI = 2.0 * math.pi


def segment_dims(segments, radius_px):
    """Segment angle and pixel size for an N-fold disc of radius rho.

    Returns ``(theta, h, w)`` with ``theta = 2*pi/N``, ``h = rho`` and
    ``w = ceil(2*rho*sin(theta/2))``.
    """
    if segments < 2 or radius_px < 2:
        raise DiscSpecError(
            f"need segments >= 2 and radius_px >= 2, got N={segments} rho={radius_px}")
    theta = TWO_PI / segments
    h = int(radius_px)
    w = int(math.ceil(2.0 * radius_px * math.sin(theta / 2.0)))
    return theta, h, w


@dataclass(frozen=True)
class DiscSpec:
    """Geometry of an N-fold symmetric disc with pixel radius ``radius_px``."""

    segments: int
    radius_px: int

    def __post_init__(self):
        segment_dims(self.segments, self.radius_px)  # validates

    @property
    def theta(self):
        return TWO_PI / self.segments

    @property
    def rho1(self):
        return self.radius_px * math.sin(self.theta / 2.0)

    @property
    def rho2(self):
        return math.hypot(self.rho1, self.radius_px)

    @property
    def beta(self):
        return math.atan2(self.rho1, self.radius_px)

    @property
    def segment_shape(self):
        """(h, w) pixel shape of the segment image this spec expects."""
        _, h, w = segment_dims(self.segments, self.radius_px)
        return h, w


def segment_corners(h, w):
    """Corners of the segment rectangle in its centered frame.

    Order (A', B', C', D') = (-h/2,-w/2), (h/2,-w/2), (h/2,w/2), (-h/2,w/2).
    """
    if h < 2 or w < 2:
        raise DiscSpecError(f"need h >= 2 and w >= 2, got h={h} w={w}")
    hh, hw = h / 2.0, w / 2.0
    return np.array([[-hh, -hw], [hh, -hw], [hh, hw], [-hh, hw]], dtype=float)


def disc_corners(spec, n):
    """Corners (A_n, B_n, C_n, D_n) of wedge rectangle ``n`` in the disc frame.

    A_n and B_n lie on the circle of radius rho1, C_n and D_n on the circle
    of radius rho2; wedge n is centered on polar angle ``n*theta``.
    """
    if not 0 <= n < spec.segments:
        raise IndexError(f"segment index {n} outside [0, {spec.segments})")
    th, r1, r2, beta = n * spec.theta, spec.rho1, spec.rho2, spec.beta
    ang = [th + math.pi / 2, th - math.pi / 2, th - beta, th + beta]
    rad = [r1, r1, r2, r2]
    return np.array([[r * math.cos(a), r * math.sin(a)] for r, a in zip(rad, ang)])


def _collinear(points, tol):
    p = np.asarray(points, dtype=float)
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                u, v = p[j] - p[i], p[k] - p[i]
                if abs(u[0] * v[1] - u[1] * v[0]) <= tol:
                    return True
    return False


def _homography_dlt(src, dst, refine=0):
    """Least-squares homography from n >= 4 correspondences (rows of src/dst).

    Hartley-normalized direct linear transform, with optional Gauss-Newton
    polish (performed in normalized space, where it is well conditioned).
    The result maps homogeneous src points onto dst points up to scale.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)

    def normalizer(pts):
        c = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-12)
        T = np.array([[scale, 0, -scale * c[0]],
                      [0, scale, -scale * c[1]],
                      [0, 0, 1.0]])
        return T

    Ts, Td = normalizer(src), normalizer(dst)
    sn = src * Ts[0, 0] + Ts[:2, 2]
    dn = dst * Td[0, 0] + Td[:2, 2]

    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0] = sn[:, 0]
    A[0::2, 1] = sn[:, 1]
    A[0::2, 2] = 1.0
    A[0::2, 6] = -dn[:, 0] * sn[:, 0]
    A[0::2, 7] = -dn[:, 0] * sn[:, 1]
    A[0::2, 8] = -dn[:, 0]
    A[1::2, 3] = sn[:, 0]
    A[1::2, 4] = sn[:, 1]
    A[1::2, 5] = 1.0
    A[1::2, 6] = -dn[:, 1] * sn[:, 0]
    A[1::2, 7] = -dn[:, 1] * sn[:, 1]
    A[1::2, 8] = -dn[:, 1]

    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    if refine:
        Hn = _refine_homography(Hn, sn, dn, iters=refine)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) > 1e-8 * np.abs(H).max():
        H = H / H[2, 2]
    else:
        H = H / np.linalg.norm(H)
    return H


def apply_homography(H, points):
    """Map (n, 2) points through a 3x3 homography, normalizing the result."""
    pts = np.asarray(points, dtype=float)
    q = pts @ H[:2, :2].T + H[:2, 2]
    w = pts @ H[2, :2] + H[2, 2]
    return q / w[:, None]


def _refine_homography(H, src, dst, iters=3):
    """Gauss-Newton polish of the corner fit down to machine precision."""
    h = H.ravel() / np.linalg.norm(H)
    n = len(src)
    for _ in range(iters):
        Hm = h.reshape(3, 3)
        num = src @ Hm[:2, :2].T + Hm[:2, 2]
        den = src @ Hm[2, :2] + Hm[2, 2]
        r = (num / den[:, None] - dst).ravel()
        J = np.zeros((2 * n, 9))
        for i in range(n):
            x, y = src[i]
            w = den[i]
            u, v = num[i] / w
            J[2 * i, 0:3] = [x / w, y / w, 1 / w]
            J[2 * i, 6:9] = [-u * x / w, -u * y / w, -u / w]
            J[2 * i + 1, 3:6] = [x / w, y / w, 1 / w]
            J[2 * i + 1, 6:9] = [-v * x / w, -v * y / w, -v / w]
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        h = h - step
        h /= np.linalg.norm(h)
    return h.reshape(3, 3)


def solve_perspective(src, dst):
    """Perspective map sending the four src corners onto the four dst corners.

    Raises SingularConfigurationError when either quad has three collinear
    points or the solve does not reproduce the corners to 1e-9.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise DiscSpecError("solve_perspective expects two (4, 2) corner arrays")
    for pts, name in ((src, "src"), (dst, "dst")):
        span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1.0)
        if _collinear(pts, 1e-9 * span * span):
            raise SingularConfigurationError(f"three {name} corners are collinear")
    H = _homography_dlt(src, dst, refine=3)
    resid = np.abs(apply_homography(H, src) - dst).max()
    if not np.isfinite(resid) or resid > 1e-9:
        raise SingularConfigurationError(
            f"perspective solve residual {resid:.3g} exceeds 1e-9")
    return H


@dataclass(frozen=True)
class DiscImage:
    """Composed disc: (2rho, 2rho, 3) pixels plus the in-disc coverage mask."""

    pixels: np.ndarray
    mask: np.ndarray

    @property
    def radius_px(self):
        return self.pixels.shape[0] // 2

    @classmethod
    def from_array(cls, pixels):
        """Wrap an arbitrary (2rho, 2rho, 3) array, zeroing pixels off-disc."""
        pixels = np.asarray(pixels, dtype=float)
        rho = pixels.shape[0] // 2
        if pixels.shape != (2 * rho, 2 * rho, 3) or rho < 2:
            raise DiscSpecError(f"disc image must be (2rho, 2rho, 3), got {pixels.shape}")
        mask = disc_mask(rho)
        out = np.where(mask[:, :, None], pixels, 0.0)
        return cls(out, mask)


def disc_mask(radius_px):
    """Boolean (2rho, 2rho) grid of pixels whose centers fall inside the disc."""
    c = np.arange(2 * radius_px) + 0.5 - radius_px
    return (c[:, None] ** 2 + c[None, :] ** 2) <= float(radius_px) ** 2


class _CompositionPlan:
    """Precomputed per-pixel sampling: wedge index, segment taps and weights."""

    def __init__(self, segments, radius_px):
        theta, h, w = segment_dims(segments, radius_px)
        size = 2 * radius_px
        mask = disc_mask(radius_px)
        c = np.arange(size) + 0.5 - radius_px
        x = np.broadcast_to(c[:, None], (size, size))[mask]
        y = np.broadcast_to(c[None, :], (size, size))[mask]

        ang = np.arctan2(y, x)
        sector = np.floor(((ang + theta / 2.0) % TWO_PI) / theta).astype(np.int64)
        sector = np.clip(sector, 0, segments - 1)

        spec = DiscSpec(segments, radius_px)
        src = segment_corners(h, w)
        forward = np.stack([solve_perspective(src, disc_corners(spec, n))
                            for n in range(segments)])
        inverse = np.linalg.inv(forward)

        Hs = inverse[sector]
        q = np.einsum("kij,kj->ki", Hs[:, :, :2], np.stack([x, y], axis=1))
        q += Hs[:, :, 2]
        sx = q[:, 0] / q[:, 2]
        sy = q[:, 1] / q[:, 2]

        # Segment array position; in-disc samples land inside the rectangle
        # by construction, so clamping only trims the half-pixel margin.
        a = np.clip(sx + h / 2.0 - 0.5, 0.0, h - 1.0)
        b = np.clip(sy + w / 2.0 - 0.5, 0.0, w - 1.0)
        a0 = np.floor(a).astype(np.int64)
        b0 = np.floor(b).astype(np.int64)
        a1 = np.minimum(a0 + 1, h - 1)
        b1 = np.minimum(b0 + 1, w - 1)
        fa = (a - a0)[:, None]
        fb = (b - b0)[:, None]

        self.segments = segments
        self.radius_px = radius_px
        self.segment_shape = (h, w)
        self.mask = mask
        self.flat_disc = np.flatnonzero(mask.ravel())
        self.sector = sector
        self.forward_maps = forward
        self.taps = np.stack([a0 * w + b0, a0 * w + b1, a1 * w + b0, a1 * w + b1], axis=1)
        self.weights = np.concatenate(
            [(1 - fa) * (1 - fb), (1 - fa) * fb, fa * (1 - fb), fa * fb], axis=1)


@lru_cache(maxsize=8)
def _plan(segments, radius_px):
    return _CompositionPlan(segments, radius_px)


def _check_segment(seg, spec):
    seg = np.asarray(seg, dtype=float)
    if seg.shape != spec.segment_shape + (3,):
        raise DiscSpecError(
            f"segment shape {seg.shape} does not match spec {spec.segment_shape + (3,)}")
    return seg


def compose_disc(seg, spec):
    """Tile ``seg`` into the N wedges of the disc described by ``spec``.

    Each in-disc pixel is bilinearly sampled from the segment through the
    inverse map of the wedge containing it; off-disc pixels are zero.
    """
    seg = _check_segment(seg, spec)
    plan = _plan(spec.segments, spec.radius_px)
    src = seg.reshape(-1, 3)
    vals = np.einsum("kt,ktc->kc", plan.weights, src[plan.taps])
    size = 2 * spec.radius_px
    out = np.zeros((size * size, 3))
    out[plan.flat_disc] = vals
    return DiscImage(out.reshape(size, size, 3), plan.mask)


def compose_transpose(disc_grad, spec):
    """Adjoint of :func:`compose_disc`: disc-pixel gradients -> segment gradients."""
    plan = _plan(spec.segments, spec.radius_px)
    g = np.asarray(disc_grad, dtype=float).reshape(-1, 3)[plan.flat_disc]
    h, w = plan.segment_shape
    out = np.zeros((h * w, 3))
    np.add.at(out, plan.taps.ravel(), (plan.weights[:, :, None] * g[:, None, :]).reshape(-1, 3))
    return out.reshape(h, w, 3)


def extract_segment(disc, spec, n):
    """Pull wedge ``n`` of a composed disc back into segment shape.

    Inverse of the composition up to two rounds of bilinear resampling.
    """
    plan = _plan(spec.segments, spec.radius_px)
    h, w = plan.segment_shape
    i, j = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pts = np.stack([i.ravel() + 0.5 - h / 2.0, j.ravel() + 0.5 - w / 2.0], axis=1)
    q = apply_homography(plan.forward_maps[n], pts)
    rho = spec.radius_px
    vals = _bilinear_clamped(disc.pixels, q[:, 0] + rho - 0.5, q[:, 1] + rho - 0.5)
    return vals.reshape(h, w, 3)


def _bilinear_clamped(img, rows, cols):
    hh, ww = img.shape[:2]
    a = np.clip(rows, 0.0, hh - 1.0)
    b = np.clip(cols, 0.0, ww - 1.0)
    a0 = np.floor(a).astype(np.int64)
    b0 = np.floor(b).astype(np.int64)
    a1 = np.minimum(a0 + 1, hh - 1)
    b1 = np.minimum(b0 + 1, ww - 1)
    fa = (a - a0)[..., None]
    fb = (b - b0)[..., None]
    flat = img.reshape(-1, img.shape[-1])
    return ((1 - fa) * (1 - fb) * flat[a0 * ww + b0]
            + (1 - fa) * fb * flat[a0 * ww + b1]
            + fa * (1 - fb) * flat[a1 * ww + b0]
            + fa * fb * flat[a1 * ww + b1])


def symmetry_score(disc, segments):
    """1 minus the mean absolute difference between the disc and its rotation
    by one segment angle, over pixels whose rotated sample stays fully
    inside the coverage mask. 1.0 means exact N-fold symmetry.
    """
    theta = TWO_PI / segments
    pixels, mask = disc.pixels, disc.mask
    rho = disc.radius_px
    c = np.arange(2 * rho) + 0.5 - rho
    x = np.broadcast_to(c[:, None], mask.shape)[mask]
    y = np.broadcast_to(c[None, :], mask.shape)[mask]
    ct, st = math.cos(theta), math.sin(theta)
    sx = ct * x + st * y
    sy = -st * x + ct * y
    a = sx + rho - 0.5
    b = sy + rho - 0.5
    a0 = np.floor(a).astype(np.int64)
    b0 = np.floor(b).astype(np.int64)
    inside = (a0 >= 0) & (b0 >= 0) & (a0 + 1 <= 2 * rho - 1) & (b0 + 1 <= 2 * rho - 1)
    a0i, b0i = a0[inside], b0[inside]
    ok = (mask[a0i, b0i] & mask[a0i, b0i + 1]
          & mask[a0i + 1, b0i] & mask[a0i + 1, b0i + 1])
    keep = np.flatnonzero(inside)[ok]
    fa = (a[keep] - a0[keep])[:, None]
    fb = (b[keep] - b0[keep])[:, None]
    a0k, b0k = a0[keep], b0[keep]
    rotated = ((1 - fa) * (1 - fb) * pixels[a0k, b0k]
               + (1 - fa) * fb * pixels[a0k, b0k + 1]
               + fa * (1 - fb) * pixels[a0k + 1, b0k]
               + fa * fb * pixels[a0k + 1, b0k + 1])
    original = pixels[mask][keep]
    return float(1.0 - np.mean(np.abs(original - rotated)))
