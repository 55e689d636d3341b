"""Relative and absolute camera pose from pair predictions."""

from __future__ import annotations

import numpy as np

from ..geometry import Intrinsics, RigidPose, SimTransform
from ..losses import norm_factor
from ..pointmap import PairPrediction, Pointmap, change_frame
from .focal import FocalSolveConfig, estimate_focal
from .matching import match_points
from .pnp import RansacConfig, pnp_ransac
from .procrustes import DegenerateConfigurationError, procrustes_pose


class TooFewMatchesError(RuntimeError):
    pass


def _lookup(pm: Pointmap, pixels):
    return pm.points[pixels[:, 1], pixels[:, 0]]


def relative_pose(
    pair12: PairPrediction,
    pair21: PairPrediction,
    method: str = "procrustes",
    ransac: RansacConfig = RansacConfig(),
    focal_cfg: FocalSolveConfig = FocalSolveConfig(),
):
    """Pose of camera 2 relative to camera 1.

    ``pair12`` is the prediction for ``(I1, I2)`` (frame of camera 1) and
    ``pair21`` for ``(I2, I1)`` (frame of camera 2).

    ``method="procrustes"`` aligns view 1's points across the two frames
    with weights ``C11 * C12`` and returns the :class:`SimTransform`
    mapping frame-1 coordinates into frame-2 coordinates.

    ``method="pnp"`` matches the two views of ``pair12`` in 3D, takes the
    focal of camera 2 from ``pair21``'s self-frame map, and returns the
    :class:`RigidPose` taking frame-1 points into camera 2 (in
    ``pair12``'s scale).
    """
    if method == "procrustes":
        weights = pair12.conf1.weight * pair21.conf2.weight
        return procrustes_pose(pair12.pts1, pair21.pts2, weights)
    if method == "pnp":
        f2 = estimate_focal(pair21.pts1, pair21.conf1, cfg=focal_cfg)
        size2 = pair12.pts2.size
        K2 = Intrinsics.centered(f2, size2)
        corr = match_points(pair12.pts1, pair12.pts2)
        if len(corr) < 4:
            raise TooFewMatchesError(f"too few matches: {len(corr)}")
        # the matched pixel of image 2 carries its own 3D point in frame 1
        pose, _ = pnp_ransac(corr.pixels2.astype(np.float64), _lookup(pair12.pts2, corr.pixels2), K2, ransac)
        return pose
    raise ValueError(f"unknown relative pose method {method!r}")


def absolute_pose(
    query_pair: PairPrediction,
    db_gt_pointmap: Pointmap,
    db_pose: RigidPose,
    intrinsics: Intrinsics | None = None,
    cfg: RansacConfig = RansacConfig(),
    method: str = "pnp",
    db_pair: PairPrediction | None = None,
    focal_cfg: FocalSolveConfig = FocalSolveConfig(),
) -> RigidPose:
    """World-to-camera pose of a query image.

    ``query_pair`` is the prediction for ``(query, db)``;
    ``db_gt_pointmap`` holds the database image's ground-truth points in
    world coordinates and ``db_pose`` its world-to-camera pose.

    ``method="pnp"`` matches query and database pixels in pointmap space,
    lifts the database pixels to world points and runs PnP-RANSAC with the
    given (or estimated) query intrinsics.

    ``method="relative"`` additionally needs ``db_pair`` (the prediction for
    ``(db, query)``): the Procrustes relative pose is brought to metric
    scale with the ratio of ground-truth to predicted normalization factors
    of the database view, then composed with ``db_pose``.
    """
    if method == "pnp":
        if intrinsics is None:
            intrinsics = Intrinsics.centered(
                estimate_focal(query_pair.pts1, query_pair.conf1, cfg=focal_cfg), query_pair.pts1.size
            )
        db_pred = query_pair.pts2.with_mask(db_gt_pointmap.valid)
        corr = match_points(query_pair.pts1, db_pred)
        if len(corr) < 4:
            raise TooFewMatchesError(f"too few matches: {len(corr)}")
        world = _lookup(db_gt_pointmap, corr.pixels2)
        pose, _ = pnp_ransac(corr.pixels1.astype(np.float64), world, intrinsics, cfg)
        return pose
    if method == "relative":
        if db_pair is None:
            raise ValueError("relative method needs db_pair (the (db, query) prediction)")
        if db_gt_pointmap.num_valid < 3:
            raise DegenerateConfigurationError(
                f"degenerate scale: database ground truth has {db_gt_pointmap.num_valid} valid pixels"
            )
        db_cam = change_frame(db_gt_pointmap, RigidPose.identity(), db_pose)
        db_self = db_pair.pts1.with_mask(db_gt_pointmap.valid)
        if db_self.num_valid < 3:
            raise DegenerateConfigurationError("degenerate scale: no co-valid database pixels")
        scale = norm_factor(db_cam.with_mask(db_self.valid)) / norm_factor(db_self)
        # query frame -> db frame, in the (db, query) prediction's scale
        rel: SimTransform = relative_pose(query_pair, db_pair, "procrustes")
        # the predicted db frame is a uniformly scaled copy of the metric one
        q_to_db = RigidPose(rel.rotation, rel.scale * scale * rel.translation)
        return q_to_db.inverse().compose(db_pose)
    raise ValueError(f"unknown absolute pose method {method!r}")
