"""Reciprocal nearest-neighbour matching in pointmap space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import kernels
from ..pointmap import Pointmap

# below this many points the brute-force kernel beats building a tree
BRUTE_FORCE_LIMIT = 4096
_TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Matched pixel pairs; ``pixels1[k] = (i, j)`` in image 1 matches ``pixels2[k]``."""

    pixels1: np.ndarray
    pixels2: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.pixels1)


def nearest_neighbors(query, ref, brute_force_limit=BRUTE_FORCE_LIMIT):
    """Exact nearest neighbour in ``ref`` of every row of ``query``.

    Returns ``(index, squared_distance)``. Exact distance ties resolve to the
    lowest reference index whichever search path runs.
    """
    query = np.ascontiguousarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.ascontiguousarray(ref, dtype=np.float64).reshape(-1, 3)
    if len(ref) == 0 or len(query) == 0:
        return np.full(len(query), -1, dtype=np.int64), np.full(len(query), np.inf)
    if max(len(query), len(ref)) < brute_force_limit:
        return kernels.brute_nn(query, ref)

    tree = cKDTree(ref)
    k = min(2, len(ref))
    dist, idx = tree.query(query, k=k)
    dist = dist.reshape(len(query), k)
    idx = idx.reshape(len(query), k).astype(np.int64)
    best = idx[:, 0].copy()
    diff = query - ref[best]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    if k == 2:
        # near-tied candidates: re-rank with the brute-force distance formula
        tied = np.flatnonzero(dist[:, 1] <= dist[:, 0] * (1 + _TIE_RTOL) + 1e-300)
        for q in tied:
            cand = np.array(sorted(tree.query_ball_point(query[q], dist[q, 0] * (1 + 2 * _TIE_RTOL) + 1e-300)))
            ci, cd = kernels.brute_nn(query[q : q + 1], ref[cand])
            best[q] = cand[ci[0]]
            d2[q] = cd[0]
    return best, d2


def match_points(pm1: Pointmap, pm2: Pointmap, brute_force_limit=BRUTE_FORCE_LIMIT) -> Correspondences:
    """Mutual nearest neighbours between the valid pixels of two pointmaps.

    Both maps must be expressed in the same coordinate frame. A fully
    invalid map yields an empty result.
    """
    lin1 = np.flatnonzero(pm1.valid.ravel())
    lin2 = np.flatnonzero(pm2.valid.ravel())
    p1 = pm1.points.reshape(-1, 3)[lin1]
    p2 = pm2.points.reshape(-1, 3)[lin2]
    if len(p1) == 0 or len(p2) == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return Correspondences(empty, empty.copy(), np.zeros(0))
    nn12, d12 = nearest_neighbors(p1, p2, brute_force_limit)
    nn21, _ = nearest_neighbors(p2, p1, brute_force_limit)
    a = np.flatnonzero(nn21[nn12] == np.arange(len(p1)))
    b = nn12[a]
    w1, w2 = pm1.size.width, pm2.size.width
    pix1 = np.stack([lin1[a] % w1, lin1[a] // w1], axis=1)
    pix2 = np.stack([lin2[b] % w2, lin2[b] // w2], axis=1)
    return Correspondences(pix1, pix2, np.sqrt(d12[a]))
