"""Focal length from a self-frame pointmap via Weiszfeld iterations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import ImageSize
from ..pointmap import ConfidenceMap, Pointmap, pixel_grid

MIN_WEIGHT = 1e-12


class FocalUnobservableError(ValueError):
    pass


@dataclass(frozen=True)
class FocalSolveConfig:
    iterations: int = 10
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def focal_objective(f, a, b, w):
    """``sum_p w_p |a_p - f b_p|``."""
    r = a - f * b
    return float(np.sum(w * np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2)))


def focal_terms(pm: Pointmap, conf: ConfidenceMap | None = None, size: ImageSize | None = None):
    """Centered pixel coordinates, normalized rays and weights of usable pixels."""
    size = size or pm.size
    if size != pm.size:
        raise ValueError(f"pointmap is {pm.size}, expected {size}")
    u, v = pixel_grid(size)
    w = np.ones(size.shape) if conf is None else conf.weight
    z = pm.points[..., 2]
    use = pm.valid & (z > 0) & (w >= MIN_WEIGHT)
    a = np.stack([u[use] - size.width / 2.0, v[use] - size.height / 2.0], axis=1)
    b = pm.points[use][:, :2] / z[use][:, None]
    return a, b, w[use]


def weiszfeld_focal(a, b, w, cfg: FocalSolveConfig = FocalSolveConfig()):
    """Minimize ``sum w |a - f b|`` over scalar ``f``.

    Starts from the weighted least-squares solution. Returns the focal and
    the objective value before the first and after every iteration.
    """
    if len(a) < 2:
        raise FocalUnobservableError("focal unobservable: fewer than 2 usable pixels")
    bb = np.sum(b * b, axis=1)
    ab = np.sum(a * b, axis=1)
    if not np.any(bb * w > 0):
        raise FocalUnobservableError("focal unobservable: all rays on the optical axis")
    f = np.sum(w * ab) / np.sum(w * bb)
    history = [focal_objective(f, a, b, w)]
    for _ in range(cfg.iterations):
        r = a - f * b
        u = 1.0 / np.maximum(np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2), cfg.epsilon)
        f = np.sum(w * u * ab) / np.sum(w * u * bb)
        history.append(focal_objective(f, a, b, w))
    return float(f), history


def estimate_focal(
    pm: Pointmap,
    conf: ConfidenceMap | None = None,
    size: ImageSize | None = None,
    cfg: FocalSolveConfig = FocalSolveConfig(),
) -> float:
    """Focal of the camera whose frame ``pm`` is expressed in.

    The principal point is taken at the image center. Pixels with
    non-positive depth or negligible confidence do not participate.
    """
    a, b, w = focal_terms(pm, conf, size)
    f, _ = weiszfeld_focal(a, b, w, cfg)
    if not (np.isfinite(f) and f > 0):
        raise FocalUnobservableError(f"focal unobservable: solver returned {f}")
    return f
