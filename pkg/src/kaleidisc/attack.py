"""Iterative optimization of the segment texture against a pose victim.

Each iteration composes the disc from the current segment, renders an
augmented random view pair, obtains the victim's pointmaps, evaluates the
orientation-consistency loss, estimates its gradient with respect to the
segment pixels (simultaneous-perturbation probes for black-box victims,
exact chained gradients for victims that supply them), and applies a
signed step clipped to [0, 1]. Colors are clipped to a printable-ink
budget on a fixed cadence, at which point checkpoints are also written.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .disc import DiscSpec, compose_disc, compose_transpose
from .errors import (EstimationFailedError, ExecutionError,
                     GradientEstimationError, InsufficientMatchesError,
                     InvalidConfigError)
from .loss import LossValue, Observation, poc_loss
from .pose import Intrinsics, look_at_pose, project, world_to_camera
from .scene import (RenderedView, ViewpointRanges, disc_gradient,
                    draw_augment_params, sample_viewpoint, shade, trace_scene)

DEFAULT_ALPHA = 1.0 / 255.0
SPSA_STEP = 2.0 / 255.0


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 500
    clip_cadence: int = 50
    alpha: float = DEFAULT_ALPHA
    segments: int = 12
    segment_height: int = 64
    spsa_samples: int = 8
    seed: int = 0
    victim: str = "builtin"
    ink_limit: float = 300.0
    pitch: tuple = (10.0, 85.0)
    yaw: tuple = (0.0, 360.0)
    dist: tuple = (2.0, 3.0)
    disc_radius_m: float = 1.0
    render_size: int = 128
    focal_px: float = 140.0
    spsa_step: float = SPSA_STEP

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidConfigError("iterations must be >= 1")
        if self.clip_cadence < 1:
            raise InvalidConfigError("clip_cadence must be >= 1")
        if self.alpha <= 0:
            raise InvalidConfigError("alpha must be positive")
        if self.spsa_samples < 1:
            raise InvalidConfigError("spsa_samples must be >= 1")
        if not 0.0 < self.ink_limit <= 400.0:
            raise InvalidConfigError("ink_limit must lie in (0, 400]")
        if self.victim not in ("builtin", "bridge"):
            raise InvalidConfigError(f"unknown victim {self.victim!r}")

    @property
    def ranges(self):
        return ViewpointRanges(pitch=self.pitch, yaw=self.yaw, distance=self.dist)

    @property
    def disc_spec(self):
        return DiscSpec(self.segments, self.segment_height)


@dataclass(frozen=True)
class GradientEstimate:
    values: np.ndarray
    method: str  # "spsa" | "exact-from-bridge"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss: float
    flags: str
    viewpoints: tuple  # (d, p1, y1, p2, y2)
    checkpoint: Optional[str] = None
    failed: bool = False
    message: str = ""

    def line(self):
        if self.failed:
            loss_s = "failed"
        else:
            loss_s = f"{self.loss:.17g}"
        pair = ",".join(f"{v:.17g}" for v in self.viewpoints)
        return f"iter={self.iteration} loss={loss_s} pair={pair} flags={self.flags}"


@dataclass
class AttackTrace:
    records: list = field(default_factory=list)

    def losses(self):
        return [r.loss for r in self.records if not r.failed]


def sign_update(seg, grad, alpha=DEFAULT_ALPHA):
    """clip(seg + alpha * sign(grad), 0, 1) with sign(0) = 0."""
    g = np.asarray(grad, dtype=float)
    return np.clip(np.asarray(seg, dtype=float) + alpha * np.sign(g), 0.0, 1.0)


def gamut_clip(seg, ink_limit=300.0):
    """Clamp each pixel's total ink after a naive RGB->CMYK split.

    K is 1 - max(R, G, B); C, M, Y are the remaining per-channel inks. When
    C+M+Y+K exceeds the limit (percent / 100), C, M and Y are scaled down
    until the total meets it. Idempotent.
    """
    if not 0.0 < ink_limit <= 400.0:
        raise InvalidConfigError("ink_limit must lie in (0, 400]")
    rgb = np.clip(np.asarray(seg, dtype=float), 0.0, 1.0)
    mx = rgb.max(axis=-1, keepdims=True)
    k = 1.0 - mx
    with np.errstate(divide="ignore", invalid="ignore"):
        cmy = np.where(mx > 0, (mx - rgb) / mx, 0.0)
    total = cmy.sum(axis=-1, keepdims=True) + k
    limit = ink_limit / 100.0
    cmy_sum = cmy.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(cmy_sum > 0, (limit - k) / cmy_sum, 1.0)
    scale = np.clip(scale, 0.0, 1.0)
    # Tolerance absorbs float round-off so a second pass is an exact no-op.
    need = total > limit + 1e-9
    cmy = np.where(need, cmy * scale, cmy)
    return np.where(need, (1.0 - cmy) * mx, rgb)


def estimate_gradient_spsa(loss_fn, seg, samples, rng, c=SPSA_STEP):
    """Simultaneous-perturbation gradient estimate of ``loss_fn`` at ``seg``.

    Each probe draws a Rademacher sign grid, evaluates the loss at
    seg +/- c*delta and accumulates the central difference along delta.
    Probes where the loss evaluation fails are dropped; if all fail the
    estimation fails.
    """
    seg = np.asarray(seg, dtype=float)
    acc = np.zeros_like(seg)
    used = 0
    for _ in range(samples):
        delta = rng.integers(0, 2, size=seg.shape).astype(float) * 2.0 - 1.0
        try:
            lp = loss_fn(seg + c * delta)
            lm = loss_fn(seg - c * delta)
        except ExecutionError:
            continue
        acc += ((lp - lm) / (2.0 * c)) * delta
        used += 1
    if used == 0:
        raise GradientEstimationError("all gradient probes failed")
    return GradientEstimate(acc / used, "spsa")


def _view_from_bundle(bundle, disc, aug):
    """Shaded, augmented view plus the mask of pixels the [0,1] clip left
    untouched (where the augmentation is locally linear)."""
    pre = shade(bundle, disc.pixels) * aug.brightness + aug.sigma * aug.noise
    img = np.clip(pre, 0.0, 1.0)
    active = (pre > 0.0) & (pre < 1.0)
    view = RenderedView(img, bundle.pointmap, bundle.disc_mask,
                        bundle.pose, bundle.intrinsics)
    return view, active


def _loss_from_result(result, bundle_a, bundle_b, intr):
    def obs(bundle, pm):
        center = project(intr, world_to_camera(bundle.pose, np.zeros(3)))
        return Observation(pm, bundle.disc_mask, center)
    return poc_loss(obs(bundle_a, result.pointmap_a),
                    obs(bundle_b, result.pointmap_b))


# A victim that cannot produce an estimate yields no flow direction on any
# channel: by the loss's degeneracy rule every channel contributes 0 with
# its flag raised, which keeps the optimization objective total.
FULLY_DEGENERATE = LossValue(0.0, (0.0, 0.0, 0.0), (True, True, True))


def run_attack(config, scene, victim, out_dir=None):
    """Run the optimization loop; returns the final segment and the trace.

    ``scene`` provides geometry (radius, occluder, background); its disc
    texture is replaced every iteration by the current composition.
    Checkpoints (segment and disc images plus the trace file) are written
    under ``out_dir`` when given.
    """
    from .formats import save_image

    spec = config.disc_spec
    rng = np.random.default_rng(config.seed)
    seg = rng.random(spec.segment_shape + (3,))
    intr = Intrinsics.centered(config.render_size, config.focal_px)
    trace = AttackTrace()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    trace_file = open(out_path / "trace.txt", "w") if out_path is not None else None

    fail_streak = 0
    max_streak = max(4, math.ceil(0.25 * config.iterations))
    try:
        for t in range(config.iterations):
            d = sample_viewpoint(rng, config.ranges)[0]
            _, p1, y1 = sample_viewpoint(rng, config.ranges)
            _, p2, y2 = sample_viewpoint(rng, config.ranges)
            viewpoints = (d, p1, y1, p2, y2)
            pose_a = look_at_pose(d, p1, y1)
            pose_b = look_at_pose(d, p2, y2)
            disc0 = compose_disc(seg, spec)
            scene_t = replace(scene, disc=disc0)
            bundle_a = trace_scene(scene_t, pose_a, intr)
            bundle_b = trace_scene(scene_t, pose_b, intr)
            aug_a = draw_augment_params(rng, (intr.height, intr.width, 3))
            aug_b = draw_augment_params(rng, (intr.height, intr.width, 3))
            victim_seed = int(rng.integers(2 ** 62))

            def eval_loss(seg_arr, want_result=False):
                disc = compose_disc(seg_arr, spec)
                va, act_a = _view_from_bundle(bundle_a, disc, aug_a)
                vb, act_b = _view_from_bundle(bundle_b, disc, aug_b)
                try:
                    result = victim.pointmaps(va, vb, seed=victim_seed)
                    value = _loss_from_result(result, bundle_a, bundle_b, intr)
                except (InsufficientMatchesError, EstimationFailedError):
                    result, value = None, FULLY_DEGENERATE
                return (value, result, act_a, act_b) if want_result else value.total

            probe_rng = np.random.default_rng(victim_seed ^ 0x5EED)
            try:
                value, result, act_a, act_b = eval_loss(seg, want_result=True)
                if victim.provides_gradients:
                    if result is None:
                        raise GradientEstimationError("victim produced no estimate")
                    grad = _chain_bridge_gradient(result, bundle_a, bundle_b,
                                                  aug_a, aug_b, (act_a, act_b), spec)
                else:
                    grad = estimate_gradient_spsa(eval_loss, seg,
                                                  config.spsa_samples, probe_rng,
                                                  config.spsa_step)
            except ExecutionError as exc:
                fail_streak += 1
                rec = IterationRecord(t, float("nan"), "---", viewpoints,
                                      failed=True, message=str(exc))
                trace.records.append(rec)
                if trace_file:
                    trace_file.write(rec.line() + "\n")
                if fail_streak > max_streak:
                    raise ExecutionError(
                        f"aborting: {fail_streak} consecutive victim failures "
                        f"(last: {exc})") from exc
                continue
            fail_streak = 0

            seg = sign_update(seg, grad.values, config.alpha)
            checkpoint = None
            if t % config.clip_cadence == 0:
                seg = gamut_clip(seg, config.ink_limit)
                if out_path is not None:
                    checkpoint = str(out_path / f"segment_{t:05d}.png")
                    save_image(checkpoint, seg)
                    save_image(out_path / f"disc_{t:05d}.png",
                               compose_disc(seg, spec).pixels)
            rec = IterationRecord(t, value.total, value.flags_str, viewpoints,
                                  checkpoint=checkpoint)
            trace.records.append(rec)
            if trace_file:
                trace_file.write(rec.line() + "\n")

        if out_path is not None:
            save_image(out_path / "segment_final.png", seg)
            save_image(out_path / "disc_final.png", compose_disc(seg, spec).pixels)
    finally:
        if trace_file:
            trace_file.close()
    return seg, trace


def _chain_bridge_gradient(result, bundle_a, bundle_b, aug_a, aug_b, actives, spec):
    """Map served image-space gradients back onto the segment pixels.

    The render and the composition are piecewise-bilinear gathers, so their
    adjoints reuse the same tap weights; the photometric augmentation
    contributes its brightness factor, with clipped pixels zeroed.
    """
    side = 2 * spec.radius_px
    disc_grad = np.zeros((side, side, 3))
    for g, bundle, aug, active in ((result.grad_a, bundle_a, aug_a, actives[0]),
                                   (result.grad_b, bundle_b, aug_b, actives[1])):
        if g is None:
            raise GradientEstimationError("bridge response carried no gradients")
        g = np.where(active, np.asarray(g, dtype=float), 0.0) * aug.brightness
        disc_grad += disc_gradient(bundle, g, (side, side))
    return GradientEstimate(compose_transpose(disc_grad, spec), "exact-from-bridge")
