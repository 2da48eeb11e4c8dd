"""Relative-pose accuracy metrics over predicted vs ground-truth pose sets.

RRA@g / RTA@g count camera pairs whose relative rotation / translation
direction errs by strictly less than g degrees; mAA(30) threshold-averages
min(RRA, RTA) over 1..30 degrees; RRS is the mean pairwise cosine
similarity among the predicted relative rotations alone (near 1 means the
predictions collapsed to a common orientation).
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InvalidInputError
from .pose import relative_rotation

_T_EPS = 1e-12


def rotation_angle(Ra, Rb):
    """Geodesic angle in degrees between two rotations."""
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    c = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_angle(t_pred, t_gt):
    """Angle in degrees between two direction vectors.

    Both near-zero counts as 0 degrees, exactly one near-zero as 180.
    """
    a = np.asarray(t_pred, dtype=float)
    b = np.asarray(t_gt, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= _T_EPS and nb <= _T_EPS:
        return 0.0
    if na <= _T_EPS or nb <= _T_EPS:
        return 180.0
    c = float(np.dot(a, b) / (na * nb))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True)
class MetricsReport:
    rra: dict
    rta: dict
    maa30: float
    rrs: float
    pair_count: int

    def lines(self):
        out = []
        for g in sorted(self.rra):
            out.append(f"RRA@{g}={self.rra[g]:.17g}")
        for g in sorted(self.rta):
            out.append(f"RTA@{g}={self.rta[g]:.17g}")
        out.append(f"mAA(30)={self.maa30:.17g}")
        out.append(f"RRS={self.rrs:.17g}")
        return out


def compute_report(predicted, ground_truth, gammas=(5, 15, 30)):
    """All metrics over the unordered camera pairs of two matched pose lists."""
    pred = list(predicted)
    gt = list(ground_truth)
    if len(pred) != len(gt):
        raise InvalidInputError("predicted and ground-truth pose counts differ")
    if len(pred) < 2:
        raise InvalidInputError("need at least two cameras")

    rot_err, tra_err, rel_pred = [], [], []
    centers_p = [p.camera_center for p in pred]
    centers_g = [p.camera_center for p in gt]
    for i, j in combinations(range(len(pred)), 2):
        rp = relative_rotation(pred[i].rotation, pred[j].rotation)
        rg = relative_rotation(gt[i].rotation, gt[j].rotation)
        rel_pred.append(rp)
        rot_err.append(rotation_angle(rp, rg))
        tra_err.append(translation_angle(centers_p[j] - centers_p[i],
                                         centers_g[j] - centers_g[i]))
    rot_err = np.asarray(rot_err)
    tra_err = np.asarray(tra_err)

    def frac_below(errs, g):
        return float(np.mean(errs < g))

    rra = {g: frac_below(rot_err, g) for g in gammas}
    rta = {g: frac_below(tra_err, g) for g in gammas}
    maa30 = float(np.mean([min(frac_below(rot_err, t), frac_below(tra_err, t))
                           for t in range(1, 31)]))

    if len(rel_pred) < 2:
        rrs = 1.0  # a single relative rotation is trivially self-consistent
    else:
        sims = [np.trace(rel_pred[p] @ rel_pred[q].T) / 3.0
                for p, q in combinations(range(len(rel_pred)), 2)]
        rrs = float(np.mean(sims))

    return MetricsReport(rra, rta, maa30, rrs, len(rot_err))
