"""Coordinate-flow directions over the disc region and the projected
orientation consistency loss between two views.

Pixel 2-vectors live in (x, y) = (column, row) order, matching the pointmap
pixel-coordinate convention. A bisection line through the disc center splits
the disc-region pixel set M into M1 and M2; the coordinate variation of a
pointmap channel is the difference of its means over the two sides. Summed
along a line normal and its perpendicular this gives a flow direction;
averaging over three line orientations 30 degrees apart makes the estimate
robust to partial occlusion of the disc.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (DegenerateRegionError, DegenerateSplitError,
                     InvalidInputError)
from .pose import project, world_to_camera
from .scene import Pointmap, RenderedView

DEGENERACY_EPS = 1e-9
LINE_ANGLES_DEG = (0.0, 30.0, 60.0)


@dataclass(frozen=True)
class BisectionLine:
    """Line through the disc center, identified by its unit normal angle.

    ``angle`` is the normal direction in radians, reduced to [0, pi).
    """

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @property
    def normal(self):
        n = np.array([math.cos(self.angle), math.sin(self.angle)])
        # Snap trig residue to exact zero so boundary pixels (side == 0)
        # follow the M1 rule instead of float noise.
        n[np.abs(n) < 1e-12] = 0.0
        return n / np.linalg.norm(n)

    @property
    def perpendicular(self):
        return BisectionLine(self.angle + math.pi / 2.0)


@dataclass(frozen=True)
class RegionSplit:
    """Disjoint index sets covering the disc-region pixels.

    ``m1``/``m2`` are (n, 2) integer arrays of (x, y) pixel coordinates.
    """

    m1: np.ndarray
    m2: np.ndarray


def _mask_points(mask):
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    return np.stack([xs, ys], axis=1)


def bisect(mask, center, line):
    """Split the mask pixels by the signed side of a line through ``center``.

    A pixel lands in M2 when (p - center) . normal > 0; exact zeros go to M1.
    """
    pts = _mask_points(mask)
    if pts.shape[0] == 0:
        raise DegenerateSplitError("empty disc region")
    side = (pts - np.asarray(center, dtype=float)) @ line.normal > 0.0
    m1, m2 = pts[~side], pts[side]
    if len(m1) == 0 or len(m2) == 0:
        raise DegenerateSplitError("bisection left one side empty")
    return RegionSplit(m1, m2)


def coordinate_variation(channel, split, valid=None):
    """Mean of the channel over M2 minus its mean over M1.

    Pixels marked invalid are dropped; a side that empties out raises
    DegenerateSplitError.
    """
    channel = np.asarray(channel, dtype=float)
    sides = []
    for part in (split.m1, split.m2):
        xs, ys = part[:, 0], part[:, 1]
        vals = channel[ys, xs]
        if valid is not None:
            vals = vals[np.asarray(valid, dtype=bool)[ys, xs]]
        if vals.size == 0:
            raise DegenerateSplitError("all pixels on one side are invalid")
        sides.append(vals.mean())
    return sides[1] - sides[0]


def flow_direction(channel, mask, center, line, valid=None):
    """delta(l) * u + delta(l_perp) * u_perp for one bisection line."""
    perp = line.perpendicular
    d1 = coordinate_variation(channel, bisect(mask, center, line), valid)
    d2 = coordinate_variation(channel, bisect(mask, center, perp), valid)
    return d1 * line.normal + d2 * perp.normal


def average_flow_direction(channel, mask, center, valid=None):
    """Mean flow direction over the three standard line orientations.

    Degenerate splits are skipped; if every orientation degenerates the
    region itself is unusable.
    """
    taus = []
    for deg in LINE_ANGLES_DEG:
        try:
            taus.append(flow_direction(channel, mask, center,
                                       BisectionLine(math.radians(deg)), valid))
        except DegenerateSplitError:
            continue
    if not taus:
        raise DegenerateRegionError("no bisection orientation produced a split")
    return np.mean(taus, axis=0)


@dataclass(frozen=True)
class Observation:
    """One view's pointmap restricted to the disc region.

    ``center`` is the disc center in pixel coordinates (x, y); when omitted
    the mask centroid is used.
    """

    pointmap: Pointmap
    disc_mask: np.ndarray
    center: Optional[np.ndarray] = None

    @classmethod
    def from_view(cls, view):
        origin_px = project(view.intrinsics, world_to_camera(view.pose, np.zeros(3)))
        return cls(view.pointmap, view.disc_mask, origin_px)

    def resolved_center(self):
        if self.center is not None:
            return np.asarray(self.center, dtype=float)
        pts = _mask_points(self.disc_mask)
        if pts.shape[0] == 0:
            raise DegenerateRegionError("empty disc mask has no centroid")
        return pts.mean(axis=0)

    def region_mask(self):
        return np.asarray(self.disc_mask, dtype=bool) & self.pointmap.valid


def _as_observation(x):
    if isinstance(x, Observation):
        return x
    if isinstance(x, RenderedView):
        return Observation.from_view(x)
    raise InvalidInputError(f"expected Observation or RenderedView, got {type(x)!r}")


@dataclass(frozen=True)
class LossValue:
    """Loss total with per-channel cosine terms and degeneracy flags."""

    total: float
    per_channel: tuple
    degenerate: tuple

    @property
    def flags_str(self):
        return "".join("1" if f else "0" for f in self.degenerate)


def _flows(obs):
    mask = obs.region_mask()
    center = obs.resolved_center()
    return [average_flow_direction(obs.pointmap.coords[:, :, i], mask, center)
            for i in range(3)]


def poc_loss(a, b, eps=DEGENERACY_EPS):
    """Sum over channels of the cosine between the two views' average flow
    directions. A channel where either flow is shorter than ``eps``
    contributes 0 and raises its degeneracy flag.

    Both pointmaps must share one coordinate frame. Two RenderedViews are
    handled by re-expressing the second view's pointmap in the first
    camera's frame; Observations are consumed as given.
    """
    if isinstance(a, RenderedView) and isinstance(b, RenderedView):
        from .scene import reframe_pointmap
        obs_a = Observation.from_view(a)
        obs_b = Observation(reframe_pointmap(b.pointmap, b.pose, a.pose),
                            b.disc_mask, Observation.from_view(b).center)
    else:
        obs_a, obs_b = _as_observation(a), _as_observation(b)
    flows_a, flows_b = _flows(obs_a), _flows(obs_b)
    terms, flags = [], []
    for ta, tb in zip(flows_a, flows_b):
        na, nb = np.linalg.norm(ta), np.linalg.norm(tb)
        if na < eps or nb < eps:
            terms.append(0.0)
            flags.append(True)
        else:
            terms.append(float(np.dot(ta, tb) / (na * nb)))
            flags.append(False)
    return LossValue(float(sum(terms)), tuple(terms), tuple(flags))


def flow_weight_field(mask, center, valid=None):
    """Per-pixel 2-vector weights w with tau_bar_i = sum_p w(p) * O_i(p).

    The average flow direction is linear in the pointmap channel; this
    assembles the combined weights of the three bisection orientations,
    skipping degenerate splits exactly like average_flow_direction.
    """
    mask = np.asarray(mask, dtype=bool)
    if valid is not None:
        mask = mask & np.asarray(valid, dtype=bool)
    H, W = mask.shape
    w = np.zeros((H, W, 2))
    pts = _mask_points(mask)
    if pts.shape[0] == 0:
        raise DegenerateRegionError("empty disc region")
    offs = pts - np.asarray(center, dtype=float)
    used = 0
    for deg in LINE_ANGLES_DEG:
        line = BisectionLine(math.radians(deg))
        contrib = np.zeros((H, W, 2))
        ok = True
        for ln in (line, line.perpendicular):
            side = offs @ ln.normal > 0.0
            n2, n1 = int(side.sum()), int((~side).sum())
            if n1 == 0 or n2 == 0:
                ok = False
                break
            coeff = np.where(side, 1.0 / n2, -1.0 / n1)
            contrib[pts[:, 1], pts[:, 0]] += coeff[:, None] * ln.normal
        if ok:
            w += contrib
            used += 1
    if used == 0:
        raise DegenerateRegionError("no bisection orientation produced a split")
    return w / used


def _cos_grad(a, b):
    """d cos(a, b) / d a for nonzero vectors."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    c = float(np.dot(a, b) / (na * nb))
    return b / (na * nb) - c * a / (na * na)


def poc_loss_gradients(a, b, eps=DEGENERACY_EPS):
    """Loss value plus its gradients with respect to both pointmaps.

    Returns (LossValue, dL/dcoords_a, dL/dcoords_b); gradients are zero on
    degenerate channels and outside the disc regions.
    """
    obs_a, obs_b = _as_observation(a), _as_observation(b)
    wa = flow_weight_field(obs_a.disc_mask, obs_a.resolved_center(),
                           obs_a.pointmap.valid)
    wb = flow_weight_field(obs_b.disc_mask, obs_b.resolved_center(),
                           obs_b.pointmap.valid)
    ga = np.zeros_like(obs_a.pointmap.coords, dtype=float)
    gb = np.zeros_like(obs_b.pointmap.coords, dtype=float)
    terms, flags = [], []
    for i in range(3):
        ta = np.einsum("hwk,hw->k", wa, obs_a.pointmap.coords[:, :, i])
        tb = np.einsum("hwk,hw->k", wb, obs_b.pointmap.coords[:, :, i])
        na, nb_ = np.linalg.norm(ta), np.linalg.norm(tb)
        if na < eps or nb_ < eps:
            terms.append(0.0)
            flags.append(True)
            continue
        terms.append(float(np.dot(ta, tb) / (na * nb_)))
        flags.append(False)
        ga[:, :, i] = wa @ _cos_grad(ta, tb)
        gb[:, :, i] = wb @ _cos_grad(tb, ta)
    value = LossValue(float(sum(terms)), tuple(terms), tuple(flags))
    return value, ga, gb


def oc_loss(Ra, Rb):
    """Sum of cosines between corresponding rotation rows: trace(Ra Rb^T)."""
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    return float(np.trace(Ra @ Rb.T))


@dataclass(frozen=True)
class ChannelCorrelation:
    pearson: float
    sign_agreement: float
    used: int
    insufficient: bool


@dataclass(frozen=True)
class CorrespondenceReport:
    """Per-channel agreement between pointmap-flow cosines and the cosines of
    the plane-projected ground-truth orientation rows."""

    channels: tuple
    pairs_total: int


MIN_CORRESPONDENCE_PAIRS = 30


def verify_projection_correspondence(pose_pairs, scene, intr):
    """Compare, over rendered pose pairs, the per-channel flow-direction
    cosines from ideal pointmaps against the cosines of the plane-projected
    orientation rows from the ground-truth rotations.
    """
    from .pose import projected_orientation
    from .scene import render_view

    pose_pairs = list(pose_pairs)
    flow_cos = [[] for _ in range(3)]
    row_cos = [[] for _ in range(3)]
    for pose_a, pose_b in pose_pairs:
        va = render_view(scene, pose_a, intr)
        vb = render_view(scene, pose_b, intr)
        value = poc_loss(va, vb)
        ra = projected_orientation(pose_a.rotation)
        rb = projected_orientation(pose_b.rotation)
        for i in range(3):
            if value.degenerate[i]:
                continue
            na, nb = np.linalg.norm(ra[i]), np.linalg.norm(rb[i])
            if na < DEGENERACY_EPS or nb < DEGENERACY_EPS:
                continue
            flow_cos[i].append(value.per_channel[i])
            row_cos[i].append(float(np.dot(ra[i], rb[i]) / (na * nb)))

    channels = []
    for i in range(3):
        f = np.asarray(flow_cos[i])
        r = np.asarray(row_cos[i])
        used = len(f)
        if used < 2 or f.std() < 1e-12 or r.std() < 1e-12:
            channels.append(ChannelCorrelation(float("nan"), float("nan"), used, True))
            continue
        pearson = float(np.corrcoef(f, r)[0, 1])
        agree = float(np.mean(np.sign(f) == np.sign(r)))
        channels.append(ChannelCorrelation(pearson, agree, used,
                                           used < MIN_CORRESPONDENCE_PAIRS))
    return CorrespondenceReport(tuple(channels), len(pose_pairs))
