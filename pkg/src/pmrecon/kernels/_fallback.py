"""Pure numpy versions of the compiled kernels.

Most functions follow the same floating-point operation order as their
compiled twins, so both backends agree to the last bit on typical inputs.
The scatter sums of ``edge_residuals`` use ``bincount`` and may differ
from the compiled loop in the last few bits.
"""

import numpy as np

_CHUNK = 1 << 22  # elements per temporary block


def robust_residuals(chi, y, w, zero_tol):
    """Weighted Euclidean residual norms and their gradient w.r.t. ``chi``.

    Returns ``(sum_k w_k |chi_k - y_k|, w_k (chi_k - y_k) / |chi_k - y_k|)``.
    Residuals with norm ``<= zero_tol`` get a zero subgradient. The sum is
    accumulated sequentially in row order.
    """
    r = chi - y
    nrm = np.sqrt(r[:, 0] * r[:, 0] + r[:, 1] * r[:, 1] + r[:, 2] * r[:, 2])
    terms = w * nrm
    total = float(np.cumsum(terms)[-1]) if terms.size else 0.0
    grad = np.zeros_like(r)
    live = nrm > zero_tol
    s = w[live] / nrm[live]
    grad[live] = s[:, None] * r[live]
    return total, grad


def brute_nn(query, ref):
    """Exact nearest neighbour of every query row in ``ref`` (squared distances).

    Ties resolve to the lowest reference index.
    """
    nq, nr = len(query), len(ref)
    idx = np.empty(nq, dtype=np.int64)
    d2 = np.empty(nq, dtype=np.float64)
    if nr == 0:
        idx[:] = -1
        d2[:] = np.inf
        return idx, d2
    step = max(1, _CHUNK // max(nr, 1))
    for a in range(0, nq, step):
        q = query[a : a + step]
        dx = q[:, 0:1] - ref[None, :, 0]
        dy = q[:, 1:2] - ref[None, :, 1]
        dz = q[:, 2:3] - ref[None, :, 2]
        dist = dx * dx + dy * dy + dz * dz
        best = np.argmin(dist, axis=1)
        idx[a : a + step] = best
        d2[a : a + step] = dist[np.arange(len(q)), best]
    return idx, d2


def raycast(origin, dirs, v0, e1, e2, centers, radii, t_min):
    """Nearest hit along ``origin + t * dirs`` against triangles then spheres.

    Triangles are given as ``(v0, e1 = v1 - v0, e2 = v2 - v0)``. Returns the
    hit parameter (``inf`` on miss) and primitive id (triangles first, then
    spheres offset by the triangle count; ``-1`` on miss).
    """
    nrays = len(dirs)
    ntri = len(v0)
    t_best = np.full(nrays, np.inf)
    id_best = np.full(nrays, -1, dtype=np.int64)
    step = max(1, _CHUNK // max(ntri, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        if ntri:
            s = origin[None, :] - v0
            for a in range(0, nrays, step):
                d = dirs[a : a + step]
                dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
                px = dy * e2[None, :, 2] - dz * e2[None, :, 1]
                py = dz * e2[None, :, 0] - dx * e2[None, :, 2]
                pz = dx * e2[None, :, 1] - dy * e2[None, :, 0]
                det = e1[None, :, 0] * px + e1[None, :, 1] * py + e1[None, :, 2] * pz
                inv = 1.0 / det
                u = (s[None, :, 0] * px + s[None, :, 1] * py + s[None, :, 2] * pz) * inv
                qx = s[:, 1] * e1[:, 2] - s[:, 2] * e1[:, 1]
                qy = s[:, 2] * e1[:, 0] - s[:, 0] * e1[:, 2]
                qz = s[:, 0] * e1[:, 1] - s[:, 1] * e1[:, 0]
                v = (dx * qx[None] + dy * qy[None] + dz * qz[None]) * inv
                t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz)[None] * inv
                ok = (det != 0.0) & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
                t = np.where(ok, t, np.inf)
                k = np.argmin(t, axis=1)
                tk = t[np.arange(len(d)), k]
                hit = np.isfinite(tk)
                t_best[a : a + step] = tk
                id_best[a : a + step] = np.where(hit, k, -1)
        for k in range(len(centers)):
            o = origin - centers[k]
            dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
            aa = dx * dx + dy * dy + dz * dz
            bh = dx * o[0] + dy * o[1] + dz * o[2]
            c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - radii[k] * radii[k]
            disc = bh * bh - aa * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            qq = np.where(bh > 0.0, -(bh + sq), -(bh - sq))
            t1 = qq / aa
            t2 = c / qq
            lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
            t = np.where(lo > t_min, lo, np.where(hi > t_min, hi, np.inf))
            t = np.where((disc >= 0.0) & (qq != 0.0), t, np.inf)
            better = t < t_best
            t_best = np.where(better, t, t_best)
            id_best = np.where(better, ntri + k, id_best)
    return t_best, id_best


def edge_residuals(chi, gidx, X, w, eid, R, t, s, zero_tol, need_grad):
    """Fused alignment residuals over all (edge, pixel) entries.

    Entry ``k`` compares world point ``chi[gidx[k]]`` with
    ``s[e] (R[e] X[k] + t[e])`` for ``e = eid[k]``. Returns the weighted
    sum of residual norms, the gradient w.r.t. ``chi`` (scattered per
    pixel) and per-edge accumulators of the target-side gradient
    ``gy = -g``: ``sum gy``, ``sum gy . Y`` and ``sum gy X^T``.
    """
    Xr = np.einsum("kij,kj->ki", R[eid], X)
    Y = s[eid][:, None] * (Xr + t[eid])
    r = chi[gidx] - Y
    nrm = np.sqrt(r[:, 0] * r[:, 0] + r[:, 1] * r[:, 1] + r[:, 2] * r[:, 2])
    terms = w * nrm
    total = float(np.cumsum(terms)[-1]) if terms.size else 0.0
    ne = len(R)
    if not need_grad:
        return total, np.zeros((0, 3)), np.zeros((ne, 3)), np.zeros(ne), np.zeros((ne, 3, 3))
    live = nrm > zero_tol
    c = np.where(live, w / np.where(live, nrm, 1.0), 0.0)
    g = c[:, None] * r
    npix = len(chi)
    gchi = np.column_stack([np.bincount(gidx, weights=g[:, a], minlength=npix) for a in range(3)])
    gsum = -np.column_stack([np.bincount(eid, weights=g[:, a], minlength=ne) for a in range(3)])
    gsy = -np.bincount(eid, weights=np.sum(g * Y, axis=1), minlength=ne)
    gyx = np.empty((ne, 3, 3))
    for a in range(3):
        for b in range(3):
            gyx[:, a, b] = -np.bincount(eid, weights=g[:, a] * X[:, b], minlength=ne)
    return total, gchi, gsum, gsy, gyx
