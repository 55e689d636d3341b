"""Evaluation metrics for depth maps, relative camera poses and surfaces.

Reports are plain dataclasses whose ``to_dict`` output uses fixed
snake_case keys, so they serialize directly to JSON.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment.aggregate import lower_median
from .geometry import RigidPose, rotation_angle
from .pointmap import DepthMap
from .recovery.matching import nearest_neighbors

DEFAULT_POSE_THRESHOLDS = (5.0, 15.0, 30.0)
MAA_MAX_DEGREES = 30
# a gt relative translation shorter than this has no usable direction
TRANSLATION_EPS = 1e-12


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DepthEvalReport:
    abs_rel: float
    delta_accuracy: float
    inlier_ratio: float
    n_pixels: int
    normalization: str
    tau: float = 1.03

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PoseEvalReport:
    """Relative pose accuracies.

    ``rta_at`` values are ``None`` when no pair has a usable ground-truth
    translation direction; such pairs are counted in ``rta_skipped``.
    """

    rra_at: dict
    rta_at: dict
    maa: float
    n_pairs: int
    rta_skipped: int = 0
    rotation_errors: list = field(default_factory=list, repr=False)
    translation_errors: list = field(default_factory=list, repr=False)

    def to_dict(self, with_errors=False):
        out = {
            "rra_at": {_key(t): v for t, v in self.rra_at.items()},
            "rta_at": {_key(t): v for t, v in self.rta_at.items()},
            "maa": self.maa,
            "n_pairs": self.n_pairs,
            "rta_skipped": self.rta_skipped,
        }
        if with_errors:
            out["rotation_errors"] = list(self.rotation_errors)
            out["translation_errors"] = list(self.translation_errors)
        return out


@dataclass(frozen=True)
class SurfaceEvalReport:
    accuracy: float
    completeness: float
    overall: float

    def to_dict(self):
        return asdict(self)


def _key(t):
    t = float(t)
    return str(int(t)) if t.is_integer() else repr(t)


# depth


def eval_depth(pred: DepthMap, gt: DepthMap, normalize="median", tau=1.03) -> DepthEvalReport:
    """Depth error metrics over pixels valid in both maps.

    Parameters
    ----------
    pred, gt : DepthMap
        Same size. Only pixels valid in both are scored.
    normalize : {"median", "none"}
        With ``"median"`` the prediction is multiplied by
        ``median(gt) / median(pred)`` (lower medians over the scored pixels)
        first, which removes a global scale.
    tau : float
        Threshold on ``max(pred / gt, gt / pred)`` for the inlier ratio.

    Returns
    -------
    DepthEvalReport
        ``abs_rel`` is the mean of ``|gt - pred| / gt``; ``delta_accuracy``
        is the fraction with max-ratio below 1.25.
    """
    if normalize not in ("median", "none"):
        raise ValueError(f"normalize must be 'median' or 'none', got {normalize!r}")
    if not tau > 1.0:
        raise ValueError(f"tau must be > 1, got {tau}")
    if pred.size != gt.size:
        raise ValueError(f"size mismatch {pred.size} vs {gt.size}")
    co = pred.valid & gt.valid
    if not co.any():
        raise EmptyEvaluationError("prediction and ground truth share no valid pixel")
    y = gt.depth[co]
    if np.any(y <= 0):
        raise ValueError("ground-truth depths must be positive")
    yhat = pred.depth[co]
    if normalize == "median":
        yhat = yhat * (lower_median(y) / lower_median(yhat))
    ratio = np.maximum(yhat / y, y / yhat)
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(y - yhat) / y)),
        delta_accuracy=float(np.count_nonzero(ratio < 1.25) / y.size),
        inlier_ratio=float(np.count_nonzero(ratio < tau) / y.size),
        n_pixels=int(y.size),
        normalization=normalize,
        tau=float(tau),
    )


# poses


def _direction_angle(a, b):
    """Angle in degrees between two nonzero vectors."""
    c = np.cross(a, b)
    return math.degrees(math.atan2(float(np.linalg.norm(c)), float(np.dot(a, b))))


def relative_pose_errors(gt: list[RigidPose], pred: list[RigidPose]):
    """Rotation and translation-direction errors for every ordered pair.

    Returns ``(rotation_deg, translation_deg)``, both of length
    ``N (N - 1)`` in ``(i, j)`` row-major order. A translation entry is
    ``nan`` when the ground-truth relative translation is too short to
    define a direction; a zero predicted translation scores 180 degrees.
    """
    if len(gt) != len(pred):
        raise ValueError(f"{len(gt)} ground-truth poses but {len(pred)} predictions")
    if len(gt) < 2:
        raise ValueError("need at least two poses")
    rot, trans = [], []
    n = len(gt)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            rg = gt[j].compose(gt[i].inverse())
            rp = pred[j].compose(pred[i].inverse())
            rot.append(math.degrees(rotation_angle(rp.R @ rg.R.T)))
            tg, tp = rg.translation, rp.translation
            if np.linalg.norm(tg) <= TRANSLATION_EPS:
                trans.append(math.nan)
            elif np.linalg.norm(tp) == 0.0:
                trans.append(180.0)
            else:
                trans.append(_direction_angle(tp, tg))
    return np.array(rot), np.array(trans)


def mean_average_accuracy(rot_err, trans_err, max_degrees=MAA_MAX_DEGREES):
    """Area under the accuracy curve of ``max(rot, trans)`` errors.

    Accuracy is evaluated at every integer threshold ``1..max_degrees``
    (strictly below) and averaged. Pairs with an undefined translation
    error count as failures.
    """
    err = np.maximum(rot_err, np.where(np.isnan(trans_err), np.inf, trans_err))
    if err.size == 0:
        raise EmptyEvaluationError("no pose pairs")
    hits = sum(int(np.count_nonzero(err < tau)) for tau in range(1, max_degrees + 1))
    return hits / (max_degrees * err.size)


def eval_relative_poses(gt: list[RigidPose], pred: list[RigidPose], thresholds=DEFAULT_POSE_THRESHOLDS) -> PoseEvalReport:
    """RRA / RTA at the given thresholds (degrees) and mAA up to 30 degrees."""
    rot, trans = relative_pose_errors(gt, pred)
    defined = ~np.isnan(trans)
    n_def = int(np.count_nonzero(defined))
    rra, rta = {}, {}
    for t in thresholds:
        t = float(t)
        rra[t] = np.count_nonzero(rot < t) / rot.size
        rta[t] = np.count_nonzero(trans[defined] < t) / n_def if n_def else None
    return PoseEvalReport(
        rra_at=rra,
        rta_at=rta,
        maa=mean_average_accuracy(rot, trans),
        n_pairs=int(rot.size),
        rta_skipped=int(rot.size - n_def),
        rotation_errors=rot.tolist(),
        translation_errors=trans.tolist(),
    )


# surfaces


def eval_surface(pred_points, gt_points) -> SurfaceEvalReport:
    """Mean nearest-neighbour distances between two point sets.

    ``accuracy`` averages over predicted points the distance to the closest
    ground-truth point, ``completeness`` the reverse, and ``overall`` is
    their mean.
    """
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyEvaluationError("surface evaluation needs two nonempty point sets")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("point sets must be finite")
    _, d_pg = nearest_neighbors(pred, gt)
    _, d_gp = nearest_neighbors(gt, pred)
    acc = float(np.mean(np.sqrt(d_pg)))
    comp = float(np.mean(np.sqrt(d_gp)))
    return SurfaceEvalReport(acc, comp, (acc + comp) / 2)
