"""Synthetic renderer for object-centric planar scenes.

Per-pixel ray casting against the textured ground plane (y = 0) and an
optional axis-aligned box occluder. Each render produces the RGB view, the
exact camera-frame pointmap of the hits, and the in-image disc mask. No
shading model: albedo only.

The texture lookup is factored into a pose-only geometry pass
(:func:`trace_scene`) and a texture-only shading pass (:func:`shade`), so
repeated evaluations of the same viewpoint with different disc textures
reuse the ray geometry.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .disc import DiscImage
from .errors import InvalidConfigError, InvalidSceneError
from .pose import CameraPose, Intrinsics, world_to_camera


@dataclass(frozen=True)
class Pointmap:
    """Camera-frame coordinates per pixel plus a validity mask."""

    coords: np.ndarray  # (H, W, 3)
    valid: np.ndarray   # (H, W) bool


@dataclass(frozen=True)
class Occluder:
    """Axis-aligned box with a flat albedo."""

    center: np.ndarray
    extents: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        for name in ("center", "extents", "albedo"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.extents <= 0):
            raise InvalidSceneError("occluder extents must be positive")


@dataclass(frozen=True)
class SceneConfig:
    """Textured disc on the ground plane, optional occluder, flat background."""

    disc: DiscImage
    disc_radius_m: float
    background: np.ndarray = (0.35, 0.35, 0.35)
    occluder: Optional[Occluder] = None

    def __post_init__(self):
        if self.disc_radius_m <= 0:
            raise InvalidSceneError("disc radius must be positive")
        object.__setattr__(self, "background", np.asarray(self.background, dtype=float))


@dataclass(frozen=True)
class RenderedView:
    image: np.ndarray       # (H, W, 3) in [0, 1]
    pointmap: Pointmap
    disc_mask: np.ndarray   # (H, W) bool
    pose: CameraPose
    intrinsics: Intrinsics


@dataclass(frozen=True)
class TraceBundle:
    """Pose-dependent ray geometry, reusable across disc textures."""

    pose: CameraPose
    intrinsics: Intrinsics
    pointmap: Pointmap
    disc_mask: np.ndarray
    base_image: np.ndarray   # background/occluder colors, zero where disc
    taps: np.ndarray         # (k, 4) flat indices into the disc image
    weights: np.ndarray      # (k, 4) bilinear weights
    disc_flat: np.ndarray    # (k,) flat pixel indices covered by the disc


def trace_scene(scene, pose, intr):
    """Cast one ray per pixel and precompute the disc texture taps."""
    H, W = intr.height, intr.width
    center = pose.camera_center
    if center[1] >= 0:
        raise InvalidSceneError("camera must be on the viewing side of the plane (y < 0)")
    origin_cam = world_to_camera(pose, np.zeros(3))
    if origin_cam[2] <= 0:
        raise InvalidSceneError("camera does not face the disc center")

    u = np.arange(W, dtype=float)
    v = np.arange(H, dtype=float)
    dir_cam = np.stack([
        np.broadcast_to((u[None, :] - intr.cx) / intr.fx, (H, W)),
        np.broadcast_to((v[:, None] - intr.cy) / intr.fy, (H, W)),
        np.ones((H, W)),
    ], axis=-1)
    dir_w = dir_cam @ pose.rotation  # R^T applied to each ray

    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = -center[1] / dir_w[..., 1]
    plane_hit = np.isfinite(t_plane) & (t_plane > 1e-9)
    t_plane = np.where(plane_hit, t_plane, np.inf)

    t_box = np.full((H, W), np.inf)
    if scene.occluder is not None:
        bmin = scene.occluder.center - scene.occluder.extents / 2.0
        bmax = scene.occluder.center + scene.occluder.extents / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (bmin - center) / dir_w
            t2 = (bmax - center) / dir_w
        tn = np.nanmax(np.minimum(t1, t2), axis=-1)
        tf = np.nanmin(np.maximum(t1, t2), axis=-1)
        box_hit = (tn <= tf) & (tf > 1e-9)
        t_box = np.where(box_hit, np.where(tn > 1e-9, tn, tf), np.inf)

    t_hit = np.minimum(t_plane, t_box)
    valid = np.isfinite(t_hit)
    t_safe = np.where(valid, t_hit, 0.0)
    coords = t_safe[..., None] * dir_cam
    pointmap = Pointmap(coords, valid)

    world = center + t_safe[..., None] * dir_w
    on_plane = valid & (t_plane <= t_box)
    rr = world[..., 0] ** 2 + world[..., 2] ** 2
    disc_mask = on_plane & (rr <= scene.disc_radius_m ** 2)

    base = np.empty((H, W, 3))
    base[:] = scene.background
    if scene.occluder is not None:
        base[valid & (t_box < t_plane)] = scene.occluder.albedo
    base[disc_mask] = 0.0

    # Bilinear taps into the disc image for every disc-mask pixel. Samples
    # are pulled radially inside radius rho-1 so all four taps land on
    # in-disc texels (the texture is zero outside its own mask).
    rho = scene.disc.radius_px
    scale = rho / scene.disc_radius_m
    px = world[..., 0][disc_mask] * scale
    pz = world[..., 2][disc_mask] * scale
    rr_tex = np.hypot(px, pz)
    pull = np.where(rr_tex > rho - 1.5, (rho - 1.5) / np.maximum(rr_tex, 1e-12), 1.0)
    a = np.clip(px * pull + rho - 0.5, 0.0, 2 * rho - 1.0)
    b = np.clip(pz * pull + rho - 0.5, 0.0, 2 * rho - 1.0)
    a0 = np.floor(a).astype(np.int64)
    b0 = np.floor(b).astype(np.int64)
    a1 = np.minimum(a0 + 1, 2 * rho - 1)
    b1 = np.minimum(b0 + 1, 2 * rho - 1)
    fa = (a - a0)[:, None]
    fb = (b - b0)[:, None]
    taps = np.stack([a0 * 2 * rho + b0, a0 * 2 * rho + b1,
                     a1 * 2 * rho + b0, a1 * 2 * rho + b1], axis=1)
    weights = np.concatenate([(1 - fa) * (1 - fb), (1 - fa) * fb,
                              fa * (1 - fb), fa * fb], axis=1)

    return TraceBundle(pose, intr, pointmap, disc_mask, base,
                       taps, weights, np.flatnonzero(disc_mask.ravel()))


def shade(bundle, disc_pixels):
    """Apply a disc texture to traced geometry, producing the RGB image."""
    H, W = bundle.intrinsics.height, bundle.intrinsics.width
    img = bundle.base_image.reshape(-1, 3).copy()
    src = np.asarray(disc_pixels, dtype=float).reshape(-1, 3)
    img[bundle.disc_flat] = np.einsum("kt,ktc->kc", bundle.weights, src[bundle.taps])
    return img.reshape(H, W, 3)


def disc_gradient(bundle, image_grad, disc_shape):
    """Image-space gradients accumulated back onto the disc texture grid."""
    flat = np.zeros((disc_shape[0] * disc_shape[1], 3))
    g = np.asarray(image_grad, dtype=float).reshape(-1, 3)[bundle.disc_flat]
    np.add.at(flat, bundle.taps.ravel(),
              (bundle.weights[:, :, None] * g[:, None, :]).reshape(-1, 3))
    return flat.reshape(disc_shape[0], disc_shape[1], 3)


def render_view(scene, pose, intr):
    """Render the scene from a pose: image, ground-truth pointmap, disc mask."""
    bundle = trace_scene(scene, pose, intr)
    image = shade(bundle, scene.disc.pixels)
    return RenderedView(image, bundle.pointmap, bundle.disc_mask, pose, intr)


def reframe_pointmap(pm, pose_src, pose_dst):
    """Re-express a pointmap from one camera's frame in another camera's frame.

    Pointmap pairs are compared in a single frame (the first view's), the
    same convention pointmap-regression networks use for their second view.
    """
    R = pose_dst.rotation @ pose_src.rotation.T
    t = pose_dst.translation - R @ pose_src.translation
    coords = np.where(pm.valid[..., None], pm.coords @ R.T + t, 0.0)
    return Pointmap(coords, pm.valid)


@dataclass(frozen=True)
class ViewpointRanges:
    """Closed sampling ranges for (distance, pitch, yaw)."""

    pitch: tuple = (10.0, 85.0)
    yaw: tuple = (0.0, 360.0)
    distance: tuple = (2.0, 3.0)

    def __post_init__(self):
        for name in ("pitch", "yaw", "distance"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise InvalidConfigError(f"empty {name} range [{lo}, {hi}]")
        if not (0.0 < self.pitch[0] and self.pitch[1] < 90.0):
            raise InvalidConfigError("pitch range must stay inside (0, 90)")
        if self.distance[0] <= 0.0:
            raise InvalidConfigError("distance must be positive")


FIXED_RING = ViewpointRanges(pitch=(55.0, 55.0), yaw=(0.0, 360.0), distance=(2.4, 2.4))


def sample_viewpoint(rng, ranges=ViewpointRanges()):
    """Uniform (distance, pitch, yaw) draw from the given ranges."""
    d = rng.uniform(*ranges.distance) if ranges.distance[0] < ranges.distance[1] else ranges.distance[0]
    p = rng.uniform(*ranges.pitch) if ranges.pitch[0] < ranges.pitch[1] else ranges.pitch[0]
    y = rng.uniform(*ranges.yaw) if ranges.yaw[0] < ranges.yaw[1] else ranges.yaw[0]
    return d, p, y


@dataclass(frozen=True)
class AugmentParams:
    brightness: float
    sigma: float
    noise: np.ndarray


def draw_augment_params(rng, shape):
    """Brightness scale in [0.8, 1.2] and Gaussian pixel noise with
    sigma drawn in [0, 2/255]."""
    return AugmentParams(brightness=rng.uniform(0.8, 1.2),
                         sigma=rng.uniform(0.0, 2.0 / 255.0),
                         noise=rng.standard_normal(shape))


def apply_augment(image, params):
    out = image * params.brightness + params.sigma * params.noise
    return np.clip(out, 0.0, 1.0)


def augment(view, rng):
    """Photometric augmentation of a rendered view; geometry is untouched."""
    params = draw_augment_params(rng, view.image.shape)
    return replace(view, image=apply_augment(view.image, params))
