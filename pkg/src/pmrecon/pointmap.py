"""Pointmaps, depthmaps and exact conversions between them.

Pixel ``(i, j)`` maps to image-plane coordinate exactly ``(i, j)``: ``i``
indexes the width (column) and ``j`` the height (row), no half-pixel
offset. Grids are stored row-major as ``(H, W, ...)`` arrays, so the point
of pixel ``(i, j)`` lives at ``points[j, i]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ImageSize, Intrinsics, RigidPose


class IncompleteSceneError(ValueError):
    """A view lacks the depth, intrinsics or pose needed for an operation."""


def _as_mask(valid, shape):
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != shape:
        raise ValueError(f"mask shape {valid.shape} does not match grid {shape}")
    return valid


@dataclass(frozen=True, eq=False)
class Pointmap:
    """``H x W`` grid of 3D points with a validity mask."""

    points: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"points must have shape (H, W, 3), got {pts.shape}")
        valid = _as_mask(self.valid, pts.shape[:2])
        finite = np.isfinite(pts).all(axis=2)
        # never trust a non-finite point, whatever the caller's mask says
        valid = valid & finite
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def size(self):
        return ImageSize(self.points.shape[1], self.points.shape[0])

    @property
    def num_valid(self):
        return int(self.valid.sum())

    def valid_points(self):
        """``(N, 3)`` valid points in row-major pixel order."""
        return self.points[self.valid]

    def scaled(self, factor):
        return Pointmap(self.points * factor, self.valid)

    def with_mask(self, mask):
        return Pointmap(self.points, self.valid & np.asarray(mask, dtype=bool))


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must have shape (H, W), got {d.shape}")
        valid = _as_mask(self.valid, d.shape)
        with np.errstate(invalid="ignore"):
            valid = valid & np.isfinite(d) & (d > 0)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", valid)

    @property
    def size(self):
        return ImageSize(self.depth.shape[1], self.depth.shape[0])

    def scaled(self, factor):
        return DepthMap(self.depth * factor, self.valid)


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"confidence must have shape (H, W), got {w.shape}")
        if not (np.isfinite(w).all() and (w > 0).all()):
            raise ValueError("confidence weights must be finite and strictly positive")
        object.__setattr__(self, "weight", w)

    @classmethod
    def constant(cls, size: ImageSize, value=1.0):
        return cls(np.full(size.shape, float(value)))

    @property
    def size(self):
        return ImageSize(self.weight.shape[1], self.weight.shape[0])


@dataclass(frozen=True, eq=False)
class PairPrediction:
    """Two pointmaps and confidences, both expressed in view 1's camera frame."""

    pts1: Pointmap
    conf1: ConfidenceMap
    pts2: Pointmap
    conf2: ConfidenceMap

    def __post_init__(self):
        if self.pts1.size != self.conf1.size or self.pts2.size != self.conf2.size:
            raise ValueError("pointmap and confidence sizes differ")

    @property
    def view1(self):
        return self.pts1, self.conf1

    @property
    def view2(self):
        return self.pts2, self.conf2

    def mean_confidence(self):
        """Average confidence over both views' valid pixels."""
        w = np.concatenate([self.conf1.weight[self.pts1.valid], self.conf2.weight[self.pts2.valid]])
        return float(w.mean()) if w.size else 0.0


def pixel_grid(size: ImageSize):
    """Pixel coordinate grids ``(U, V)`` of shape ``(H, W)``."""
    return np.meshgrid(
        np.arange(size.width, dtype=np.float64), np.arange(size.height, dtype=np.float64), indexing="xy"
    )


def depth_to_pointmap(depth: DepthMap, intrinsics: Intrinsics) -> Pointmap:
    """Back-project a depthmap through ``K^-1 [i D, j D, D]``.

    The z component is the input depth itself, so converting back with
    :func:`pointmap_to_depth` is bit-exact.
    """
    u, v = pixel_grid(depth.size)
    cx, cy = intrinsics.principal_point
    f = intrinsics.focal
    d = np.where(depth.valid, depth.depth, 0.0)
    pts = np.stack([(u - cx) * d / f, (v - cy) * d / f, d], axis=-1)
    return Pointmap(pts, depth.valid)


def pointmap_to_depth(pm: Pointmap) -> DepthMap:
    z = pm.points[..., 2]
    return DepthMap(np.where(pm.valid, z, 0.0), pm.valid & (z > 0))


def change_frame(pm: Pointmap, from_pose: RigidPose, to_pose: RigidPose) -> Pointmap:
    """Re-express ``pm`` from ``from_pose``'s camera frame into ``to_pose``'s.

    Both poses are world-to-camera, so the mapping is ``P_to @ P_from^-1``.
    """
    rel = to_pose.compose(from_pose.inverse())
    pts = np.where(pm.valid[..., None], pm.points, 0.0)
    return Pointmap(rel.apply(pts.reshape(-1, 3)).reshape(pts.shape), pm.valid)


def make_gt_pair(scene, n: int, m: int) -> tuple[Pointmap, Pointmap]:
    """Ground-truth pair for views ``(n, m)``, both expressed in view ``n``'s frame.

    ``scene`` is anything exposing ``views[k].intrinsics``, ``.pose`` and
    ``.depth`` (see :class:`pmrecon.oracle.Scene`).
    """
    for k in (n, m):
        if k < 0 or k >= len(scene.views):
            raise IncompleteSceneError(f"view {k} does not exist")
        view = scene.views[k]
        if getattr(view, "depth", None) is None:
            raise IncompleteSceneError(f"view {k} has no depthmap")
    vn, vm = scene.views[n], scene.views[m]
    x_nn = depth_to_pointmap(vn.depth, vn.intrinsics)
    x_mm = depth_to_pointmap(vm.depth, vm.intrinsics)
    x_mn = x_nn if n == m else change_frame(x_mm, vm.pose, vn.pose)
    return x_nn, x_mn
