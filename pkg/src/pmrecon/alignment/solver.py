"""Global alignment of pairwise predictions by first-order descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Intrinsics, RigidPose, SimTransform, matrix_to_quat, quat_normalize
from ..pointmap import DepthMap, Pointmap, change_frame, depth_to_pointmap, pointmap_to_depth
from ..recovery.focal import FocalSolveConfig, estimate_focal
from ..recovery.procrustes import procrustes_pose, weighted_procrustes
from .graph import SceneGraph
from .objective import FREE, PINHOLE, AlignmentProblem

log = logging.getLogger(__name__)


class AlignmentDivergedError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class IncompleteGraphError(ValueError):
    pass


@dataclass(frozen=True)
class AlignConfig:
    mode: str = PINHOLE
    iterations: int = 300
    learning_rate: float = 0.01
    lr_schedule: str = "cosine"
    lr_min: float = 1e-4
    rng_seed: int = 0
    min_conf_keep: float = 1.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # reject (then shrink) steps whose loss exceeds (1 + accept_slack) times
    # the best loss so far; a slack of 0 makes the descent monotone
    monotone: bool = True
    accept_slack: float = 0.2
    max_backtracks: int = 6
    zero_tol: float = 0.0

    def __post_init__(self):
        if self.mode not in (FREE, PINHOLE):
            raise ValueError(f"mode must be {FREE!r} or {PINHOLE!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.accept_slack >= 0 or self.max_backtracks < 0:
            raise ValueError("accept_slack and max_backtracks must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")


@dataclass(eq=False)
class AlignmentResult:
    mode: str
    sizes: list
    edges: list[tuple[int, int, SimTransform]]
    loss_trace: list[float]
    iterations_run: int
    pointmaps: list[Pointmap] | None = None
    intrinsics: list[Intrinsics] | None = None
    poses: list[RigidPose] | None = None
    depths: list[DepthMap] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def num_views(self):
        return len(self.sizes)

    def world_pointmaps(self):
        """World-frame pointmap of every view, whatever the mode."""
        if self.pointmaps is not None:
            return self.pointmaps
        out = []
        for K, P, D in zip(self.intrinsics, self.poses, self.depths):
            out.append(change_frame(depth_to_pointmap(D, K), P, RigidPose.identity()))
        return out


def learning_rate(cfg: AlignConfig, step: int) -> float:
    if cfg.lr_schedule == "constant" or cfg.iterations <= 1:
        return cfg.learning_rate
    frac = step / (cfg.iterations - 1)
    return cfg.lr_min + 0.5 * (cfg.learning_rate - cfg.lr_min) * (1.0 + np.cos(np.pi * frac))


def project_constraints(params):
    """Unit quaternions and zero mean log-scale (product of scales is 1)."""
    out = dict(params)
    for key in ("edge_q", "cam_q"):
        if key in out:
            q = out[key]
            out[key] = q / np.linalg.norm(q, axis=1, keepdims=True)
    s = out["edge_log_s"]
    out["edge_log_s"] = s - np.mean(s)
    return out


class Adam:
    """Per-array Adam moments for a dict of parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def direction(self, grads):
        """Update moments with ``grads`` and return the bias-corrected step direction."""
        self.t += 1
        out = {}
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            out[k] = mhat / (np.sqrt(vhat) + self.eps)
        return out

    def reset_momentum(self):
        for k in self.m:
            self.m[k][...] = 0.0


def run_descent(problem: AlignmentProblem, params, cfg: AlignConfig, callback=None):
    """Adam-type descent with constraint projection after every step.

    With ``cfg.monotone`` a step whose objective exceeds
    ``(1 + cfg.accept_slack)`` times the best value so far is halved up to
    ``cfg.max_backtracks`` times, and dropped (with the first moment reset)
    if it still fails. Started at an exact optimum this keeps the iterate
    put. The slack still lets the iterate climb briefly, which it must do
    to leave residuals sitting exactly at the kink of the norm.
    Returns ``(params, loss_trace)``; the trace holds the objective before
    every iteration and after the last one.
    """
    params = project_constraints(params)
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    loss, grads = problem.loss_and_grad(params)
    trace = [loss]
    if not np.isfinite(loss):
        raise AlignmentDivergedError("initial alignment loss is not finite", trace)
    best = loss
    for it in range(cfg.iterations):
        lr = learning_rate(cfg, it)
        step = opt.direction(grads)
        ref = best * (1.0 + cfg.accept_slack)
        scale = lr
        accepted = False
        for _ in range(cfg.max_backtracks + 1 if cfg.monotone else 1):
            trial = project_constraints({k: params[k] - scale * step[k] for k in params})
            t_loss = problem.loss(trial)
            if not cfg.monotone or t_loss <= ref:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            # gradients only for the step that is kept
            params = trial
            loss, grads = problem.loss_and_grad(params)
            best = min(best, loss)
        else:
            opt.reset_momentum()
        if not np.isfinite(loss):
            trace.append(loss)
            raise AlignmentDivergedError(f"alignment diverged at iteration {it}", trace)
        trace.append(loss)
        if callback is not None:
            callback(it, params, loss)
    return params, trace


def _self_edges(graph: SceneGraph):
    """For each view, the index of its best edge listing it first."""
    best = {}
    for k, e in enumerate(graph.edges):
        if e.n not in best or e.mean_confidence > graph.edges[best[e.n]].mean_confidence:
            best[e.n] = k
    missing = [v for v in graph.vertices if v not in best]
    if missing:
        raise IncompleteGraphError(f"views {missing} have no self-frame prediction (never first in a pair)")
    return best


def _spanning_order(graph: SceneGraph, root=0):
    """Prim's maximum-confidence spanning tree from ``root``; ties pick the lowest edge index."""
    graph.check_connected()
    seen = {root}
    order = []
    while len(seen) < graph.num_views:
        best = None
        for k, e in enumerate(graph.edges):
            if (e.n in seen) != (e.m in seen):
                if best is None or e.mean_confidence > graph.edges[best].mean_confidence:
                    best = k
        e = graph.edges[best]
        new = e.m if e.n in seen else e.n
        order.append((best, e.n if new == e.m else e.m, new))
        seen.add(new)
    return order


def _robust_procrustes(src_pm, dst_pm, src_conf, dst_conf, min_conf_keep):
    w = _kept(src_conf, min_conf_keep) * _kept(dst_conf, min_conf_keep)
    if np.count_nonzero(w[src_pm.valid & dst_pm.valid]) < 3:
        w = src_conf.weight * dst_conf.weight
    return procrustes_pose(src_pm, dst_pm, w)


def _view_of(edge, v):
    return edge.pair.view1 if v == edge.n else edge.pair.view2


@dataclass(eq=False)
class PinholeInit:
    focals: list[float]
    poses: list[RigidPose]
    depths: list[DepthMap]
    self_maps: list[Pointmap]
    edges: list[SimTransform]


def _kept(conf, min_conf_keep):
    """Confidence weights with the alignment's keep filter applied."""
    return np.where(conf.weight >= min_conf_keep, conf.weight, 0.0)


@dataclass(eq=False)
class _Chain:
    self_maps: dict  # view -> (Pointmap, ConfidenceMap) in the view's own frame
    to_world: dict  # view -> SimTransform, self frame -> world
    world: dict  # view -> (H, W, 3) world points of the self-frame prediction
    edges: list[SimTransform]


def _chain_frames(graph: SceneGraph, min_conf_keep: float) -> _Chain:
    """Bring every view's self-frame prediction into view 0's frame.

    Similarities are chained with Procrustes along a maximum-confidence
    spanning tree rooted at view 0. Every pair transform is then fitted to
    the chained world points, and the global scale is divided out so that
    the pair scales multiply to one. Pixels below ``min_conf_keep`` are left
    out of every fit, matching the alignment objective; when a fit would be
    left with too few points the raw confidences are used instead.
    """
    self_idx = _self_edges(graph)
    self_pm = {v: graph.edges[k].pair.view1 for v, k in self_idx.items()}
    to_world = {0: SimTransform()}
    for k, known, new in _spanning_order(graph):
        e = graph.edges[k]
        pm_k, conf_k = _view_of(e, known)
        self_k, sconf_k = self_pm[known]
        edge_to_known = _robust_procrustes(pm_k, self_k, conf_k, sconf_k, min_conf_keep)
        pm_n, conf_n = _view_of(e, new)
        self_n, sconf_n = self_pm[new]
        new_to_edge = _robust_procrustes(self_n, pm_n, sconf_n, conf_n, min_conf_keep)
        to_world[new] = to_world[known].compose(edge_to_known).compose(new_to_edge)
    world = {}
    for v in graph.vertices:
        pts = self_pm[v][0].points
        world[v] = to_world[v].apply(pts.reshape(-1, 3)).reshape(pts.shape)

    edges = []
    for e in graph.edges:
        v1, v2 = e.pair.pts1.valid, e.pair.pts2.valid
        src = np.concatenate([e.pair.pts1.points[v1], e.pair.pts2.points[v2]])
        dst = np.concatenate([world[e.n][v1], world[e.m][v2]])
        w = np.concatenate([e.pair.conf1.weight[v1], e.pair.conf2.weight[v2]])
        ok = np.concatenate([self_pm[e.n][0].valid[v1], self_pm[e.m][0].valid[v2]])
        keep = ok & (w >= min_conf_keep)
        if np.count_nonzero(keep) >= 3:
            ok = keep
        sc, R, t = weighted_procrustes(src[ok], dst[ok], w[ok])
        edges.append(SimTransform(sc, matrix_to_quat(R), t))

    g = float(np.exp(np.mean([np.log(T.scale) for T in edges])))
    edges = [SimTransform(T.scale / g, T.rotation, T.translation) for T in edges]
    to_world = {v: SimTransform(1.0 / g).compose(S) for v, S in to_world.items()}
    world = {v: X / g for v, X in world.items()}
    return _Chain(self_pm, to_world, world, edges)


def initialize_pinhole(
    graph: SceneGraph, focal_cfg: FocalSolveConfig = FocalSolveConfig(), min_conf_keep: float = 1.5
) -> PinholeInit:
    """Initial cameras, depths and pair transforms.

    Focals come from each view's self-frame prediction. Poses come from
    the chained self-frame similarities, and depths are the z of the
    self-frame predictions rescaled into the common frame.
    """
    ch = _chain_frames(graph, min_conf_keep)
    focals = [estimate_focal(*ch.self_maps[v], cfg=focal_cfg) for v in graph.vertices]
    poses, depths = [], []
    for v in graph.vertices:
        S = ch.to_world[v]
        # world = s R x + s t: the camera frame is the self frame scaled by s
        cam_to_world = RigidPose(S.rotation, S.scale * S.translation)
        poses.append(cam_to_world.inverse())
        depths.append(pointmap_to_depth(ch.self_maps[v][0]).scaled(S.scale))
    return PinholeInit(focals, poses, depths, [ch.self_maps[v][0] for v in graph.vertices], ch.edges)


def _edge_params(edges):
    return {
        "edge_q": np.array([T.rotation for T in edges]),
        "edge_t": np.array([T.translation for T in edges]),
        "edge_log_s": np.log([T.scale for T in edges]),
    }


def pinhole_params(init: PinholeInit):
    logd = []
    for D in init.depths:
        # pixels without a usable self-frame depth start at the view's median depth
        fill = np.median(D.depth[D.valid]) if D.valid.any() else 1.0
        logd.append(np.log(np.where(D.valid, D.depth, fill)).ravel())
    params = {
        "log_depth": np.concatenate(logd),
        "log_focal": np.log(init.focals),
        "cam_q": np.array([P.rotation for P in init.poses]),
        "cam_t": np.array([P.translation for P in init.poses]),
    }
    params.update(_edge_params(init.edges))
    return params


def _edges_out(graph, params):
    out = []
    for k, e in enumerate(graph.edges):
        out.append(
            (e.n, e.m, SimTransform(float(np.exp(params["edge_log_s"][k])), quat_normalize(params["edge_q"][k]), params["edge_t"][k]))
        )
    return out


def align_pinhole(graph: SceneGraph, cfg: AlignConfig = AlignConfig(), init: PinholeInit | None = None, callback=None):
    """Recover focal, pose and depth of every view.

    View 0's pose is held at its initial value (identity after
    :func:`initialize_pinhole`) to remove the global rigid gauge.
    """
    if cfg.mode != PINHOLE:
        cfg = AlignConfig(**{**cfg.__dict__, "mode": PINHOLE})
    graph.check_connected()
    init = init or initialize_pinhole(graph, min_conf_keep=cfg.min_conf_keep)
    problem = AlignmentProblem(graph, PINHOLE, cfg.min_conf_keep, cfg.zero_tol, fixed_view=0)
    params, trace = run_descent(problem, pinhole_params(init), cfg, callback)
    intr, poses, depths = [], [], []
    for v, size in enumerate(problem.sizes):
        intr.append(Intrinsics.centered(float(np.exp(params["log_focal"][v])), size))
        poses.append(RigidPose(params["cam_q"][v], params["cam_t"][v]))
        d = np.exp(params["log_depth"][problem.view_slice(v)]).reshape(size.shape)
        depths.append(DepthMap(d, init.self_maps[v].valid))
    log.info("pinhole alignment: loss %.6g -> %.6g in %d iterations", trace[0], trace[-1], cfg.iterations)
    return AlignmentResult(
        PINHOLE, problem.sizes, _edges_out(graph, params), trace, cfg.iterations,
        intrinsics=intr, poses=poses, depths=depths,
    )


def align_free(graph: SceneGraph, cfg: AlignConfig = AlignConfig(mode=FREE), callback=None):
    """Jointly optimize free world pointmaps and per-pair similarities.

    Needs no camera model: the start is the spanning-tree chaining of the
    self-frame predictions. The solution is defined up to one global
    similarity; compare against references after a similarity fit.
    """
    graph.check_connected()
    ch = _chain_frames(graph, cfg.min_conf_keep)
    problem = AlignmentProblem(graph, FREE, cfg.min_conf_keep, cfg.zero_tol, fixed_view=None)
    chi = []
    for v in graph.vertices:
        X, valid = ch.world[v], ch.self_maps[v][0].valid
        # pixels without a usable prediction start at the view's valid centroid
        fill = X[valid].mean(axis=0) if valid.any() else np.zeros(3)
        chi.append(np.where(valid[..., None], X, fill).reshape(-1, 3))
    params = {"chi": np.concatenate(chi)}
    params.update(_edge_params(ch.edges))
    params, trace = run_descent(problem, params, cfg, callback)
    pms = [
        Pointmap(params["chi"][problem.view_slice(v)].reshape(*size.shape, 3), ch.self_maps[v][0].valid)
        for v, size in enumerate(problem.sizes)
    ]
    log.info("free alignment: loss %.6g -> %.6g in %d iterations", trace[0], trace[-1], cfg.iterations)
    return AlignmentResult(FREE, problem.sizes, _edges_out(graph, params), trace, cfg.iterations, pointmaps=pms)
