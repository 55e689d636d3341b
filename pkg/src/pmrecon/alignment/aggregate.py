"""Confidence-weighted fusion of several depth predictions of one view."""

from __future__ import annotations

import logging

import numpy as np

from ..pointmap import ConfidenceMap, DepthMap

log = logging.getLogger(__name__)


def lower_median(values):
    """Median with the lower-middle element chosen on even counts."""
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if values.size == 0:
        raise ValueError("median of an empty set")
    return float(values[(values.size - 1) // 2])


def aggregate_depths(depth_predictions: list[tuple[DepthMap, ConfidenceMap]], return_dropped=False):
    """Fuse depth predictions of one view.

    Every prediction is brought to the first one's scale by the median of
    per-pixel depth ratios over co-valid pixels, then pixels are averaged
    with confidence weights over the predictions valid there. Predictions
    sharing no valid pixel with the first are dropped (and counted).
    """
    if not depth_predictions:
        raise ValueError("need at least one depth prediction")
    ref, _ = depth_predictions[0]
    size = ref.size
    num = np.zeros(size.shape)
    den = np.zeros(size.shape)
    dropped = 0
    for k, (D, C) in enumerate(depth_predictions):
        if D.size != size or C.size != size:
            raise ValueError(f"prediction {k} has size {D.size}, expected {size}")
        if k == 0:
            scale = 1.0
        else:
            co = D.valid & ref.valid
            if not co.any():
                dropped += 1
                continue
            scale = lower_median(ref.depth[co] / D.depth[co])
        w = np.where(D.valid, C.weight, 0.0)
        num += w * np.where(D.valid, D.depth * scale, 0.0)
        den += w
    if dropped:
        log.warning("aggregate_depths: dropped %d prediction(s) without co-valid pixels", dropped)
    valid = den > 0
    out = DepthMap(np.where(valid, num / np.where(valid, den, 1.0), 0.0), valid)
    if len(depth_predictions) == 1:
        out = depth_predictions[0][0]
    return (out, dropped) if return_dropped else out
