"""Confidence-weighted 3D alignment objective and its analytic gradient.

For every edge ``e = (n, m)`` and view ``v`` of the edge, every kept pixel
contributes ``C * |chi^v - s_e (R_e X^{v,e} + t_e)|`` (Euclidean norm, not
squared). World points ``chi`` are either free variables or generated by
a pinhole camera per view: ``chi = R_n^T (D K^-1 [i, j, 1] - t_n)``.

Variables live in a dict of arrays:

* edges: ``edge_q (E, 4)``, ``edge_t (E, 3)``, ``edge_log_s (E,)``
* free mode: ``chi (P, 3)`` over the concatenated pixels of all views
* pinhole mode: ``log_depth (P,)``, ``log_focal (N,)``, ``cam_q (N, 4)``,
  ``cam_t (N, 3)`` (world-to-camera)

Quaternions enter through ``q / |q|`` so finite differences on raw
components match the returned (tangent-projected) gradients.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..geometry import quat_matrix_jacobian, quat_to_matrix
from ..pointmap import pixel_grid
from .graph import SceneGraph

FREE = "free_pointmaps"
PINHOLE = "pinhole"


def _unit(q):
    return q / np.linalg.norm(q)


def _quat_grad(q, G):
    """Gradient w.r.t. raw ``q`` of a loss whose gradient w.r.t. ``R(q/|q|)`` is ``G``."""
    n = np.linalg.norm(q)
    qh = q / n
    J = quat_matrix_jacobian(qh)
    g = np.einsum("kij,ij->k", J, G)
    return (g - qh * (qh @ g)) / n


class AlignmentProblem:
    """Flattened residual layout for one graph.

    Parameters
    ----------
    graph : SceneGraph
    mode : {"free_pointmaps", "pinhole"}
    min_conf_keep : float
        Pixels with lower confidence do not contribute.
    zero_tol : float
        Residual norms at or below this get a zero subgradient.
    fixed_view : int or None
        In pinhole mode, the view whose pose receives no gradient.
    """

    def __init__(self, graph: SceneGraph, mode=PINHOLE, min_conf_keep=1.5, zero_tol=0.0, fixed_view=0, backend=None):
        if mode not in (FREE, PINHOLE):
            raise ValueError(f"unknown alignment mode {mode!r}")
        self.graph = graph
        self.mode = mode
        self.zero_tol = float(zero_tol)
        self.fixed_view = fixed_view
        self.backend = backend
        views = graph.vertices
        self.sizes = [graph.sizes[v] for v in views]
        counts = [s.num_pixels for s in self.sizes]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.num_pixels = int(self.offsets[-1])

        # per-entry layout, ordered by (edge, view slot, row-major pixel)
        X, W, G, seg = [], [], [], [0]
        for e in graph.edges:
            for v, (pm, conf) in ((e.n, e.pair.view1), (e.m, e.pair.view2)):
                keep = pm.valid & (conf.weight >= min_conf_keep)
                lin = np.flatnonzero(keep.ravel())
                X.append(pm.points.reshape(-1, 3)[lin])
                W.append(conf.weight.ravel()[lin])
                G.append(self.offsets[v] + lin)
            seg.append(seg[-1] + len(X[-2]) + len(X[-1]))
        self.X = np.concatenate(X) if X else np.zeros((0, 3))
        self.w = np.concatenate(W) if W else np.zeros(0)
        self.gidx = np.concatenate(G).astype(np.int64) if G else np.zeros(0, dtype=np.int64)
        self.edge_slices = [slice(seg[k], seg[k + 1]) for k in range(len(graph.edges))]
        self.eid = np.repeat(np.arange(len(graph.edges), dtype=np.int64), np.diff(seg))
        if len(self.w) == 0:
            raise ValueError("no pixel passes the confidence filter")

        # pinhole pixel rays: (i - cx, j - cy) per flattened pixel
        ab = []
        for s in self.sizes:
            u, v = pixel_grid(s)
            ab.append(np.stack([u.ravel() - s.width / 2.0, v.ravel() - s.height / 2.0], axis=1))
        self.pix = np.concatenate(ab)
        self.view_of_pixel = np.repeat(np.arange(len(self.sizes)), counts)

    @property
    def num_views(self):
        return len(self.sizes)

    @property
    def num_edges(self):
        return len(self.graph.edges)

    def view_slice(self, v):
        return slice(self.offsets[v], self.offsets[v + 1])

    # forward model

    def world_points(self, params):
        """``chi`` for every pixel of every view, ``(P, 3)``."""
        if self.mode == FREE:
            return params["chi"]
        return self._pinhole(params)[0]

    def _pinhole(self, params):
        """World points plus the intermediates the gradient needs."""
        vp = self.view_of_pixel
        f = np.exp(params["log_focal"])[vp]
        d = np.exp(params["log_depth"])
        cam = np.empty((self.num_pixels, 3))
        cam[:, 0] = self.pix[:, 0] * d / f
        cam[:, 1] = self.pix[:, 1] * d / f
        cam[:, 2] = d
        Rs = np.stack([quat_to_matrix(_unit(q)) for q in params["cam_q"]])
        u = cam - params["cam_t"][vp]
        chi = np.einsum("kj,kji->ki", u, Rs[vp])
        return chi, cam, u, Rs

    def _edge_transforms(self, params):
        Rs = np.stack([quat_to_matrix(_unit(q)) for q in params["edge_q"]])
        return Rs, params["edge_t"], np.exp(params["edge_log_s"])

    def edge_targets(self, params):
        """``s_e (R_e X + t_e)`` for every residual entry."""
        R, t, s = self._edge_transforms(params)
        e = self.eid
        return s[e][:, None] * (np.einsum("kij,kj->ki", R[e], self.X) + t[e])

    def loss(self, params):
        return self.loss_and_grad(params, need_grad=False)[0]

    def loss_and_grad(self, params, need_grad=True):
        if self.mode == FREE:
            chi_all, cam, u, Rv = params["chi"], None, None, None
        else:
            chi_all, cam, u, Rv = self._pinhole(params)
        R, t, s = self._edge_transforms(params)
        total, gchi, gsum, gsy, gyx = kernels.edge_residuals(
            chi_all, self.gidx, self.X, self.w, self.eid, R, t, s,
            self.zero_tol, need_grad, backend=self.backend,
        )
        if not need_grad:
            return total, None

        # edge variables: Y = s (R X + t)
        E = self.num_edges
        gq = np.zeros((E, 4))
        for k in range(E):
            gq[k] = _quat_grad(params["edge_q"][k], s[k] * gyx[k])
        grads = dict(edge_q=gq, edge_t=s[:, None] * gsum, edge_log_s=gsy)
        if self.mode == FREE:
            grads["chi"] = gchi
            return total, grads

        # chi = R_v^T (cam - t_v), cam = (a d / f, b d / f, d)
        N = self.num_views
        vp = self.view_of_pixel
        gcam = np.einsum("kj,kij->ki", gchi, Rv[vp])
        g_logd = np.sum(gcam * cam, axis=1)
        g_logf = -np.bincount(vp, weights=gcam[:, 0] * cam[:, 0] + gcam[:, 1] * cam[:, 1], minlength=N)
        g_q, g_t = np.zeros((N, 4)), np.zeros((N, 3))
        for v in range(N):
            if v == self.fixed_view:
                continue
            sl = self.view_slice(v)
            g_t[v] = -gcam[sl].sum(axis=0)
            g_q[v] = _quat_grad(params["cam_q"][v], u[sl].T @ gchi[sl])
        grads.update(log_depth=g_logd, log_focal=g_logf, cam_q=g_q, cam_t=g_t)
        return total, grads
