"""Closed-form weighted similarity alignment."""

from __future__ import annotations

import numpy as np

from ..geometry import SimTransform, matrix_to_quat
from ..pointmap import ConfidenceMap, Pointmap

_RANK_RTOL = 1e-12


class DegenerateConfigurationError(ValueError):
    pass


def weighted_procrustes(src, dst, weights=None, with_scale=True):
    """Find ``(s, R, t)`` minimizing ``sum w |s (R src + t) - dst|^2``.

    Parameters
    ----------
    src, dst : (N, 3) array
        Corresponding points.
    weights : (N,) array, optional
        Non-negative weights; uniform when omitted.
    with_scale : bool
        Fix ``s = 1`` when False (rigid alignment).

    Returns
    -------
    scale, R, t
        ``t`` is expressed before scaling, matching :class:`SimTransform`.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if len(src) < 3:
        raise DegenerateConfigurationError(f"degenerate configuration: {len(src)} weighted points, need 3")
    wsum = w.sum()
    mu_s = (w @ src) / wsum
    mu_d = (w @ dst) / wsum
    xs = src - mu_s
    xd = dst - mu_d
    cov = (xd * w[:, None]).T @ xs / wsum
    sv_src = np.linalg.svd((xs * np.sqrt(w)[:, None]), compute_uv=False)
    U, S, Vt = np.linalg.svd(cov)
    if sv_src[1] <= _RANK_RTOL * sv_src[0] or S[1] <= _RANK_RTOL * S[0]:
        raise DegenerateConfigurationError("degenerate configuration: points are collinear")
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = (U * D) @ Vt
    if with_scale:
        var_s = np.sum(w * np.sum(xs * xs, axis=1)) / wsum
        s = float(np.sum(S * D) / var_s)
    else:
        s = 1.0
    t = mu_d / s - R @ mu_s
    return s, R, t


def procrustes_pose(src: Pointmap, dst: Pointmap, weights: ConfidenceMap | np.ndarray | None = None) -> SimTransform:
    """Similarity mapping ``src`` onto ``dst`` over pixels valid in both."""
    if src.size != dst.size:
        raise ValueError(f"size mismatch {src.size} vs {dst.size}")
    if weights is None:
        w = np.ones(src.size.shape)
    else:
        w = weights.weight if isinstance(weights, ConfidenceMap) else np.asarray(weights, dtype=np.float64)
    mask = src.valid & dst.valid
    s, R, t = weighted_procrustes(src.points[mask], dst.points[mask], w[mask])
    return SimTransform(s, matrix_to_quat(R), t)
