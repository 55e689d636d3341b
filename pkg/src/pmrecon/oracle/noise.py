"""Corrupted pair predictions emulating a pairwise pointmap regressor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import SimTransform
from ..losses import EXP_CLAMP
from ..pointmap import ConfidenceMap, PairPrediction, Pointmap, make_gt_pair
from .scene import Scene, make_rng


@dataclass(frozen=True)
class NoiseModel:
    point_sigma: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 1.0
    confidence_fidelity: float = 0.0

    def __post_init__(self):
        for name in ("point_sigma", "outlier_rate", "outlier_magnitude", "confidence_fidelity"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {val}")
        if self.outlier_rate > 1 or self.confidence_fidelity > 1:
            raise ValueError("outlier_rate and confidence_fidelity must lie in [0, 1]")


def _corrupt(gt: Pointmap, depth, noise: NoiseModel, lo, hi, rng):
    shape = gt.points.shape
    gauss = rng.standard_normal(shape) * (noise.point_sigma * depth)[..., None]
    flip = rng.random(shape[:2]) < noise.outlier_rate
    uniform = lo + (hi - lo) * rng.random(shape)
    pts = np.where(gt.valid[..., None], gt.points + gauss, gt.points)
    flip &= gt.valid
    pts = np.where(flip[..., None], uniform, pts)
    err = np.linalg.norm(pts - gt.points, axis=2)
    ref = max(noise.point_sigma, 0.01) * np.where(depth > 0, depth, 1.0)
    raw = noise.confidence_fidelity * (1.0 - err / ref)
    conf = 1.0 + np.exp(np.clip(raw, -EXP_CLAMP, EXP_CLAMP))
    return Pointmap(pts, gt.valid), ConfidenceMap(conf), flip


def predict_pair(
    scene: Scene,
    n: int,
    m: int,
    noise: NoiseModel = NoiseModel(),
    seed: int = 0,
    similarity: SimTransform | None = None,
    return_outliers: bool = False,
):
    """Ground-truth pair for ``(n, m)`` corrupted by ``noise``.

    Each valid point gets isotropic Gaussian noise with standard deviation
    ``point_sigma * depth`` (its depth in its own camera); a fraction
    ``outlier_rate`` of valid pixels is replaced by uniform draws in the
    pair's bounding box grown by ``outlier_magnitude``. Confidence is
    ``1 + exp(fidelity * (1 - err / ref))``, so it decreases with the
    injected error and is the constant 2 at zero fidelity.

    An optional ``similarity`` is applied to both views afterwards, which
    emulates the arbitrary per-pair frame of a real regressor.
    """
    x1, x2 = make_gt_pair(scene, n, m)
    rng = make_rng(seed, n, m)
    both = np.concatenate([x1.valid_points(), x2.valid_points()])
    center = 0.5 * (both.min(axis=0) + both.max(axis=0))
    half = 0.5 * (both.max(axis=0) - both.min(axis=0)) * noise.outlier_magnitude
    lo, hi = center - half, center + half
    p1, c1, o1 = _corrupt(x1, scene.views[n].depth.depth, noise, lo, hi, rng)
    p2, c2, o2 = _corrupt(x2, scene.views[m].depth.depth, noise, lo, hi, rng)
    if similarity is not None:
        p1 = Pointmap(similarity.apply(p1.points.reshape(-1, 3)).reshape(p1.points.shape), p1.valid)
        p2 = Pointmap(similarity.apply(p2.points.reshape(-1, 3)).reshape(p2.points.shape), p2.valid)
    pair = PairPrediction(p1, c1, p2, c2)
    return (pair, (o1, o2)) if return_outliers else pair
