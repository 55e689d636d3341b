# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ``_fallback.py`` operation by operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def robust_residuals(const double[:, ::1] chi, const double[:, ::1] y, const double[::1] w, double zero_tol):
    cdef Py_ssize_t n = chi.shape[0]
    cdef Py_ssize_t k
    cdef double rx, ry, rz, nrm, s
    cdef double total = 0.0
    grad_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    for k in range(n):
        rx = chi[k, 0] - y[k, 0]
        ry = chi[k, 1] - y[k, 1]
        rz = chi[k, 2] - y[k, 2]
        nrm = sqrt(rx * rx + ry * ry + rz * rz)
        total = total + w[k] * nrm
        if nrm > zero_tol:
            s = w[k] / nrm
            grad[k, 0] = s * rx
            grad[k, 1] = s * ry
            grad[k, 2] = s * rz
    return total, grad_arr


def brute_nn(const double[:, ::1] query, const double[:, ::1] ref):
    cdef Py_ssize_t nq = query.shape[0]
    cdef Py_ssize_t nr = ref.shape[0]
    cdef Py_ssize_t a, b, best
    cdef double dx, dy, dz, d2, bestd
    idx_arr = np.empty(nq, dtype=np.int64)
    d2_arr = np.empty(nq, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = d2_arr
    for a in range(nq):
        best = -1
        bestd = INFINITY
        for b in range(nr):
            dx = query[a, 0] - ref[b, 0]
            dy = query[a, 1] - ref[b, 1]
            dz = query[a, 2] - ref[b, 2]
            d2 = dx * dx + dy * dy + dz * dz
            # strict comparison: the lowest index wins exact ties
            if d2 < bestd:
                bestd = d2
                best = b
        idx[a] = best
        dist[a] = bestd
    return idx_arr, d2_arr


def raycast(const double[::1] origin, const double[:, ::1] dirs,
            const double[:, ::1] v0, const double[:, ::1] e1, const double[:, ::1] e2,
            const double[:, ::1] centers, const double[::1] radii, double t_min):
    cdef Py_ssize_t nrays = dirs.shape[0]
    cdef Py_ssize_t ntri = v0.shape[0]
    cdef Py_ssize_t nsph = centers.shape[0]
    cdef Py_ssize_t r, k
    cdef double dx, dy, dz, px, py, pz, det, inv, sx, sy, sz, u, v, qx, qy, qz, t
    cdef double ox, oy, oz, a, bh, c, disc, sq, qq, t1, t2, tmp
    cdef double best
    cdef long long bestid
    t_arr = np.full(nrays, np.inf)
    id_arr = np.full(nrays, -1, dtype=np.int64)
    cdef double[::1] tout = t_arr
    cdef long long[::1] iout = id_arr
    for r in range(nrays):
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        best = INFINITY
        bestid = -1
        for k in range(ntri):
            px = dy * e2[k, 2] - dz * e2[k, 1]
            py = dz * e2[k, 0] - dx * e2[k, 2]
            pz = dx * e2[k, 1] - dy * e2[k, 0]
            det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
            if det == 0.0:
                continue
            inv = 1.0 / det
            sx = origin[0] - v0[k, 0]
            sy = origin[1] - v0[k, 1]
            sz = origin[2] - v0[k, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1[k, 2] - sz * e1[k, 1]
            qy = sz * e1[k, 0] - sx * e1[k, 2]
            qz = sx * e1[k, 1] - sy * e1[k, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
            if t > t_min and t < best:
                best = t
                bestid = k
        for k in range(nsph):
            ox = origin[0] - centers[k, 0]
            oy = origin[1] - centers[k, 1]
            oz = origin[2] - centers[k, 2]
            a = dx * dx + dy * dy + dz * dz
            bh = dx * ox + dy * oy + dz * oz
            c = ox * ox + oy * oy + oz * oz - radii[k] * radii[k]
            disc = bh * bh - a * c
            if disc < 0.0:
                continue
            sq = sqrt(disc)
            if bh > 0.0:
                qq = -(bh + sq)
            else:
                qq = -(bh - sq)
            if qq == 0.0:
                continue
            t1 = qq / a
            t2 = c / qq
            if t1 > t2:
                tmp = t1
                t1 = t2
                t2 = tmp
            if t1 > t_min:
                t = t1
            elif t2 > t_min:
                t = t2
            else:
                continue
            if t < best:
                best = t
                bestid = ntri + k
        tout[r] = best
        iout[r] = bestid
    return t_arr, id_arr


def edge_residuals(const double[:, ::1] chi, const long long[::1] gidx, const double[:, ::1] X,
                   const double[::1] w, const long long[::1] eid, const double[:, :, ::1] R,
                   const double[:, ::1] t, const double[::1] s, double zero_tol, bint need_grad):
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t ne = R.shape[0]
    cdef Py_ssize_t k, e, p
    cdef Py_ssize_t npix = chi.shape[0] if need_grad else 0
    cdef double y0, y1, y2, r0, r1, r2, nrm, c, g0, g1, g2, x0, x1, x2
    cdef double total = 0.0
    gchi_arr = np.zeros((npix, 3), dtype=np.float64)
    gsum_arr = np.zeros((ne, 3), dtype=np.float64)
    gsy_arr = np.zeros(ne, dtype=np.float64)
    gyx_arr = np.zeros((ne, 3, 3), dtype=np.float64)
    cdef double[:, ::1] gchi = gchi_arr
    cdef double[:, ::1] gsum = gsum_arr
    cdef double[::1] gsy = gsy_arr
    cdef double[:, :, ::1] gyx = gyx_arr
    for k in range(m):
        e = eid[k]
        p = gidx[k]
        x0 = X[k, 0]
        x1 = X[k, 1]
        x2 = X[k, 2]
        y0 = s[e] * (R[e, 0, 0] * x0 + R[e, 0, 1] * x1 + R[e, 0, 2] * x2 + t[e, 0])
        y1 = s[e] * (R[e, 1, 0] * x0 + R[e, 1, 1] * x1 + R[e, 1, 2] * x2 + t[e, 1])
        y2 = s[e] * (R[e, 2, 0] * x0 + R[e, 2, 1] * x1 + R[e, 2, 2] * x2 + t[e, 2])
        r0 = chi[p, 0] - y0
        r1 = chi[p, 1] - y1
        r2 = chi[p, 2] - y2
        nrm = sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        total = total + w[k] * nrm
        if not need_grad or nrm <= zero_tol:
            continue
        c = w[k] / nrm
        g0 = c * r0
        g1 = c * r1
        g2 = c * r2
        gchi[p, 0] += g0
        gchi[p, 1] += g1
        gchi[p, 2] += g2
        # target-side gradient is -g
        gsum[e, 0] -= g0
        gsum[e, 1] -= g1
        gsum[e, 2] -= g2
        gsy[e] -= g0 * y0 + g1 * y1 + g2 * y2
        gyx[e, 0, 0] -= g0 * x0
        gyx[e, 0, 1] -= g0 * x1
        gyx[e, 0, 2] -= g0 * x2
        gyx[e, 1, 0] -= g1 * x0
        gyx[e, 1, 1] -= g1 * x1
        gyx[e, 1, 2] -= g1 * x2
        gyx[e, 2, 0] -= g2 * x0
        gyx[e, 2, 1] -= g2 * x1
        gyx[e, 2, 2] -= g2 * x2
    return total, gchi_arr, gsum_arr, gsy_arr, gyx_arr
