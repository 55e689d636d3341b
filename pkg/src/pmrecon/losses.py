"""Scale-normalized 3D regression loss and its confidence-weighted form.

These are scoring kernels, not a training loop: they evaluate a predicted
pair against ground truth and expose analytic gradients for verification
and reuse by the aligner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointmap import ConfidenceMap, PairPrediction, Pointmap

# exp() argument cap; 1 + exp(80) is ~5.5e34, far from float64 overflow
EXP_CLAMP = 80.0


class EmptyNormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class LossReport:
    total: float
    per_pixel: tuple[np.ndarray, np.ndarray]
    norm_pred: float
    norm_gt: float
    masks: tuple[np.ndarray, np.ndarray] | None = None
    grad_points: tuple[np.ndarray, np.ndarray] | None = None
    grad_conf: tuple[np.ndarray, np.ndarray] | None = None


def norm_factor(pm1: Pointmap, pm2: Pointmap | None = None) -> float:
    """Average distance of all valid points of both maps to the origin."""
    maps = [pm1] if pm2 is None else [pm1, pm2]
    count = sum(pm.num_valid for pm in maps)
    if count == 0:
        raise EmptyNormalizationError("empty normalization set")
    dist = np.concatenate([np.linalg.norm(pm.valid_points(), axis=1) for pm in maps])
    return float(np.cumsum(dist)[-1] / count)


def confidence_activation(raw) -> ConfidenceMap:
    """``1 + exp(raw)`` with the exponent clamped at :data:`EXP_CLAMP`."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise ValueError("raw confidence must be finite")
    return ConfidenceMap(1.0 + np.exp(np.minimum(raw, EXP_CLAMP)))


def _pair_masks(pred, gt):
    masks = []
    for p, g in zip(pred, gt):
        if p.size != g.size:
            raise ValueError(f"size mismatch: prediction {p.size} vs ground truth {g.size}")
        masks.append(g.valid & p.valid)
    return masks


def _residuals(pred, gt, masks):
    z = norm_factor(*(p.with_mask(m) for p, m in zip(pred, masks)))
    zbar = norm_factor(*(g.with_mask(m) for g, m in zip(gt, masks)))
    if z == 0.0 or zbar == 0.0:
        raise EmptyNormalizationError("all normalization points lie at the origin")
    diffs = []
    for p, g, m in zip(pred, gt, masks):
        d = np.zeros_like(p.points)
        d[m] = p.points[m] / z - g.points[m] / zbar
        diffs.append(d)
    return z, zbar, diffs


def regression_loss(pred: tuple[Pointmap, Pointmap], gt: tuple[Pointmap, Pointmap]) -> LossReport:
    """Per-pixel distance between normalized predicted and ground-truth points.

    Pixels valid in the ground truth (and in the prediction) form the loss
    support; both pairs are normalized over that same support.
    """
    masks = _pair_masks(pred, gt)
    if sum(int(m.sum()) for m in masks) == 0:
        raise EmptyNormalizationError("empty normalization set")
    z, zbar, diffs = _residuals(pred, gt, masks)
    per_pixel = tuple(np.where(m, np.linalg.norm(d, axis=2), 0.0) for d, m in zip(diffs, masks))
    terms = np.concatenate([pp[m] for pp, m in zip(per_pixel, masks)])
    return LossReport(float(np.cumsum(terms)[-1]), per_pixel, z, zbar, masks=tuple(masks))


def confidence_loss(
    pred: PairPrediction,
    gt: tuple[Pointmap, Pointmap],
    cfg: LossConfig = LossConfig(),
    with_grad: bool = False,
) -> LossReport:
    """Confidence-weighted regression loss ``sum C * l - alpha * log C``.

    With ``with_grad`` the report carries the analytic gradient with respect
    to every predicted point (differentiating through the normalization
    factor) and to every confidence value.
    """
    pts = (pred.pts1, pred.pts2)
    confs = (pred.conf1.weight, pred.conf2.weight)
    for c in confs:
        if not (c > 0).all():
            raise ValueError("confidence must be strictly positive")
    reg = regression_loss(pts, gt)
    masks = reg.masks
    terms = []
    for c, pp, m in zip(confs, reg.per_pixel, masks):
        terms.append(c[m] * pp[m] - cfg.alpha * np.log(c[m]))
    total = float(np.cumsum(np.concatenate(terms))[-1])
    if not with_grad:
        return LossReport(total, reg.per_pixel, reg.norm_pred, reg.norm_gt, masks=masks)

    z = reg.norm_pred
    count = sum(int(m.sum()) for m in masks)
    _, _, diffs = _residuals(pts, gt, masks)
    units = []
    coupling = 0.0
    for c, d, pp, m, p in zip(confs, diffs, reg.per_pixel, masks, pts):
        u = np.zeros_like(d)
        live = m & (pp > 0)
        u[live] = d[live] / pp[live][:, None]
        units.append(u)
        coupling += float(np.sum(c[m] * np.einsum("ij,ij->i", u[m], p.points[m])))
    grads = []
    for c, u, m, p in zip(confs, units, masks, pts):
        g = np.zeros_like(p.points)
        radius = np.linalg.norm(p.points[m], axis=1)
        safe = np.where(radius > 0, radius, 1.0)
        dz = np.where(radius[:, None] > 0, p.points[m] / (count * safe[:, None]), 0.0)
        g[m] = c[m][:, None] * u[m] / z - (coupling / z**2) * dz
        grads.append(g)
    grad_conf = tuple(np.where(m, pp - cfg.alpha / c, 0.0) for c, pp, m in zip(confs, reg.per_pixel, masks))
    return LossReport(
        total, reg.per_pixel, reg.norm_pred, reg.norm_gt, masks=masks, grad_points=tuple(grads), grad_conf=grad_conf
    )
