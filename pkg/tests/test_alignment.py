import numpy as np
import pytest

from pmrecon.alignment import (
    FREE,
    PINHOLE,
    AlignConfig,
    AlignmentDivergedError,
    AlignmentProblem,
    DisconnectedGraphError,
    IncompleteGraphError,
    PinholeInit,
    aggregate_depths,
    align_free,
    align_pinhole,
    build_graph,
    initialize_pinhole,
    lower_median,
    pinhole_params,
)
from pmrecon.geometry import RigidPose, SimTransform, axis_angle_to_quat, random_quat, rotation_angle
from pmrecon.metrics import eval_depth
from pmrecon.oracle import NoiseModel, default_scene_spec, generate_scene, predict_pair
from pmrecon.pointmap import ConfidenceMap, DepthMap, PairPrediction, Pointmap
from pmrecon.recovery import weighted_procrustes

from conftest import oracle_graph, pairwise_pose_errors, world_points


def _const_pair(value, size=(4, 4)):
    pm = Pointmap(np.random.default_rng(0).normal(size=(*size, 3)))
    c = ConfidenceMap(np.full(size, value))
    return PairPrediction(pm, c, pm, c)


# graph


def test_build_graph_complete_triangle():
    g = build_graph({(0, 1): _const_pair(3.0), (1, 2): _const_pair(3.0), (0, 2): _const_pair(3.0)}, keep_threshold=2.0)
    assert [(e.n, e.m) for e in g.edges] == [(0, 1), (0, 2), (1, 2)]


def test_build_graph_drops_weak_edge():
    g = build_graph({(0, 1): _const_pair(3.0), (1, 2): _const_pair(3.0), (0, 2): _const_pair(1.2)}, keep_threshold=2.0)
    assert [(e.n, e.m) for e in g.edges] == [(0, 1), (1, 2)]


def test_build_graph_reports_components():
    with pytest.raises(DisconnectedGraphError, match=r"\{0, 1\} \| \{2, 3\}") as exc:
        build_graph({(0, 1): _const_pair(3.0), (2, 3): _const_pair(3.0), (1, 2): _const_pair(1.0)}, keep_threshold=2.0)
    assert exc.value.components == [[0, 1], [2, 3]]


def test_build_graph_rejects_self_edges():
    with pytest.raises(ValueError):
        build_graph({(1, 1): _const_pair(3.0)})


# objective


def _gt_pinhole_params(scene, graph):
    """Every alignment variable at its ground-truth value."""
    params = {
        "log_depth": np.concatenate([np.log(np.where(v.depth.valid, v.depth.depth, 1.0)).ravel() for v in scene.views]),
        "log_focal": np.log([v.intrinsics.focal for v in scene.views]),
        "cam_q": np.array([v.pose.rotation for v in scene.views]),
        "cam_t": np.array([v.pose.translation for v in scene.views]),
    }
    to_world = [v.pose.inverse() for v in scene.views]
    params["edge_q"] = np.array([to_world[e.n].rotation for e in graph.edges])
    params["edge_t"] = np.array([to_world[e.n].translation for e in graph.edges])
    params["edge_log_s"] = np.zeros(len(graph.edges))
    return params


def _truth_losses(scene):
    graph = oracle_graph(scene)
    params = _gt_pinhole_params(scene, graph)
    pinhole = AlignmentProblem(graph, PINHOLE)
    free = AlignmentProblem(graph, FREE)
    chi = np.concatenate([world_points(v).points.reshape(-1, 3) for v in scene.views])
    fparams = {k: params[k] for k in ("edge_q", "edge_t", "edge_log_s")}
    fparams["chi"] = np.nan_to_num(chi)
    return pinhole.loss(params), free.loss(fparams), float(np.sum(pinhole.w))


def test_objective_vanishes_at_truth(scene2_small):
    pinhole, free, _ = _truth_losses(scene2_small)
    assert pinhole < 1e-10
    assert free < 1e-10


def test_objective_at_truth_is_roundoff_on_large_graphs(scene5):
    # 160k weighted residuals each carry about one ulp of roundoff per coordinate
    pinhole, free, weight = _truth_losses(scene5)
    ulp = np.spacing(scene5.scale)
    assert pinhole / weight < 4 * ulp
    assert free / weight < 4 * ulp


def test_single_edge_optimum_is_zero(scene2_small):
    pair = predict_pair(scene2_small, 0, 1)
    graph = build_graph({(0, 1): pair})
    problem = AlignmentProblem(graph, FREE)
    chi = np.concatenate([np.nan_to_num(pair.pts1.points).reshape(-1, 3), np.nan_to_num(pair.pts2.points).reshape(-1, 3)])
    params = {"chi": chi, "edge_q": np.array([[1.0, 0, 0, 0]]), "edge_t": np.zeros((1, 3)), "edge_log_s": np.zeros(1)}
    assert problem.loss(params) == 0.0


def _random_params(problem, rng):
    E, N = problem.num_edges, problem.num_views
    params = {
        "edge_q": np.array([random_quat(rng) for _ in range(E)]) * rng.uniform(0.5, 2.0, (E, 1)),
        "edge_t": rng.normal(size=(E, 3)) * 0.1,
        "edge_log_s": rng.normal(size=E) * 0.1,
    }
    if problem.mode == FREE:
        params["chi"] = rng.normal(size=(problem.num_pixels, 3))
    else:
        params.update(
            log_depth=np.log(rng.uniform(2.0, 6.0, problem.num_pixels)),
            log_focal=np.log(rng.uniform(6.0, 12.0, N)),
            cam_q=np.array([random_quat(rng) for _ in range(N)]),
            cam_t=rng.normal(size=(N, 3)),
        )
    return params


def _fd_worst(problem, params, rng, h=1e-6, per_key=12):
    _, grads = problem.loss_and_grad(params)
    worst = {}
    for key, g in grads.items():
        flat = params[key].reshape(-1)
        picks = rng.choice(flat.size, size=min(per_key, flat.size), replace=False)
        err = 0.0
        for k in picks:
            up = {**params, key: params[key].copy()}
            dn = {**params, key: params[key].copy()}
            up[key].reshape(-1)[k] += h
            dn[key].reshape(-1)[k] -= h
            num = (problem.loss(up) - problem.loss(dn)) / (2 * h)
            ana = g.reshape(-1)[k]
            err = max(err, abs(num - ana) / max(abs(num), abs(ana), 1e-2))
        worst[key] = err
    return worst


@pytest.mark.parametrize("mode", [FREE, PINHOLE])
@pytest.mark.parametrize("backend", ["numpy", None])
def test_objective_gradients(scene2_small, rng, mode, backend):
    graph = oracle_graph(scene2_small, NoiseModel(point_sigma=0.05, confidence_fidelity=0.5))
    problem = AlignmentProblem(graph, mode, min_conf_keep=1.0, fixed_view=None, backend=backend)
    worst = _fd_worst(problem, _random_params(problem, rng), rng)
    assert max(worst.values()) < 1e-4, worst


def test_fixed_view_gets_no_pose_gradient(scene2_small, rng):
    graph = oracle_graph(scene2_small)
    problem = AlignmentProblem(graph, PINHOLE, fixed_view=0)
    _, g = problem.loss_and_grad(_random_params(problem, rng))
    assert np.all(g["cam_q"][0] == 0) and np.all(g["cam_t"][0] == 0)
    assert np.any(g["cam_q"][1] != 0)


def test_free_objective_gauge_invariance(scene2_small, rng):
    graph = oracle_graph(scene2_small, NoiseModel(point_sigma=0.05))
    problem = AlignmentProblem(graph, FREE)
    params = _random_params(problem, rng)
    base = problem.loss(params)
    for scale in (1.0, 2.5):
        G = SimTransform(scale, random_quat(rng), rng.normal(size=3))
        moved = dict(params)
        moved["chi"] = G.apply(params["chi"])
        edges = [G.compose(SimTransform(np.exp(ls), q / np.linalg.norm(q), t)) for q, t, ls in zip(params["edge_q"], params["edge_t"], params["edge_log_s"])]
        moved["edge_q"] = np.array([T.rotation for T in edges])
        moved["edge_t"] = np.array([T.translation for T in edges])
        moved["edge_log_s"] = np.log([T.scale for T in edges])
        # every residual is mapped by G, so the norm sum scales by G's scale
        assert problem.loss(moved) == pytest.approx(scale * base, rel=1e-9)


# initialization


def test_initialization_is_exact_on_noiseless_pairs():
    scene = generate_scene(default_scene_spec(num_views=2, seed=3))
    init = initialize_pinhole(oracle_graph(scene))
    gt = [v.pose for v in scene.views]
    rot, trans = pairwise_pose_errors(init.poses, gt, scene.scale)
    assert rot < 1e-6 and trans < 1e-6
    assert init.poses[0].rotation[0] == pytest.approx(1.0)
    for f, v in zip(init.focals, scene.views):
        assert f == pytest.approx(v.intrinsics.focal, rel=1e-6)


def test_star_graph_hub_is_identity():
    scene = generate_scene(default_scene_spec(num_views=4, width=24, height=24, seed=2))
    preds = {}
    for k in (1, 2, 3):
        preds[(0, k)] = predict_pair(scene, 0, k)
        preds[(k, 0)] = predict_pair(scene, k, 0)
    init = initialize_pinhole(build_graph(preds))
    assert np.allclose(init.poses[0].rotation, [1, 0, 0, 0], atol=1e-12)
    assert np.allclose(init.poses[0].translation, 0, atol=1e-12)


def test_spanning_tree_ties_pick_lowest_edge():
    from pmrecon.alignment.solver import _spanning_order

    pairs = {(0, 1): _const_pair(2.0), (0, 2): _const_pair(2.0), (1, 2): _const_pair(2.0), (2, 0): _const_pair(2.0)}
    order = _spanning_order(build_graph(pairs))
    assert [k for k, _, _ in order] == [0, 1]


def test_view_never_first_is_rejected(scene2_small):
    graph = build_graph({(0, 1): predict_pair(scene2_small, 0, 1)})
    with pytest.raises(IncompleteGraphError):
        initialize_pinhole(graph)


# solvers


def test_pinhole_noiseless_over_seeds():
    focal_err, rot_err, trans_err = [], [], []
    for seed in range(20):
        scene = generate_scene(default_scene_spec(num_views=3, width=32, height=32, seed=seed))
        res = align_pinhole(oracle_graph(scene), AlignConfig(iterations=100))
        focal_err.append(max(abs(K.focal / v.intrinsics.focal - 1) for K, v in zip(res.intrinsics, scene.views)))
        r, t = pairwise_pose_errors(res.poses, [v.pose for v in scene.views], scene.scale)
        rot_err.append(r)
        trans_err.append(t)
    assert np.median(focal_err) < 0.005
    assert np.median(rot_err) < 0.5
    assert np.median(trans_err) < 1e-2


def test_pinhole_depths_match_truth():
    scene = generate_scene(default_scene_spec(num_views=3, width=32, height=32, seed=7))
    res = align_pinhole(oracle_graph(scene), AlignConfig(iterations=50))
    for D, v in zip(res.depths, scene.views):
        assert eval_depth(D, v.depth, normalize="none").abs_rel < 0.01


def test_pinhole_recovers_from_perturbed_start():
    scene = generate_scene(default_scene_spec(num_views=3, width=32, height=32, seed=0))
    graph = oracle_graph(scene)
    init = initialize_pinhole(graph)
    rng = np.random.default_rng(0)
    focals = [f * (1 + rng.uniform(-0.03, 0.03)) for f in init.focals]
    tilt = [RigidPose(axis_angle_to_quat(rng.normal(size=3), np.radians(2.0))) for _ in init.poses[1:]]
    poses = [init.poses[0]] + [T.compose(P) for T, P in zip(tilt, init.poses[1:])]
    start = PinholeInit(focals, poses, init.depths, init.self_maps, init.edges)
    gt = [v.pose for v in scene.views]
    rot0, _ = pairwise_pose_errors(poses, gt, scene.scale)
    res = align_pinhole(graph, init=start)
    rot1, _ = pairwise_pose_errors(res.poses, gt, scene.scale)
    assert res.loss_trace[-1] < res.loss_trace[0] / 10
    assert rot1 < rot0 / 2


def test_gauge_constraints_hold_every_step(scene2_small):
    graph = oracle_graph(scene2_small, NoiseModel(point_sigma=0.02))
    seen = []

    def check(it, params, loss):
        seen.append(it)
        assert abs(np.sum(params["edge_log_s"])) < 1e-9
        for key in ("edge_q", "cam_q"):
            assert np.allclose(np.linalg.norm(params[key], axis=1), 1.0, atol=1e-9)

    align_pinhole(graph, AlignConfig(iterations=40), callback=check)
    assert seen == list(range(40))


def test_smoothed_trace_is_non_increasing():
    scene = generate_scene(default_scene_spec(num_views=3, width=24, height=24, seed=1))
    res = align_pinhole(oracle_graph(scene, NoiseModel(point_sigma=0.01)), AlignConfig(iterations=150))
    trace = np.array(res.loss_trace)
    smooth = np.convolve(trace, np.ones(20) / 20, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-12 * smooth[:-1])
    assert trace[-1] <= trace[0]


def test_free_alignment_with_perturbed_pairs():
    scene = generate_scene(default_scene_spec(num_views=5, width=32, height=32, seed=0))
    rng = np.random.default_rng(5)
    sims = {
        (a, b): SimTransform(float(rng.uniform(0.5, 2.0)), random_quat(rng), rng.normal(size=3))
        for a in range(5)
        for b in range(5)
        if a != b
    }
    res = align_free(oracle_graph(scene, similarities=sims), AlignConfig(mode=FREE, iterations=100))
    assert res.loss_trace[-1] <= res.loss_trace[0]
    pred = np.concatenate([pm.points[pm.valid] for pm in res.pointmaps])
    gt = np.concatenate([world_points(v).points[pm.valid] for v, pm in zip(scene.views, res.pointmaps)])
    s, R, t = weighted_procrustes(pred, gt)
    fitted = s * (pred @ R.T + t)
    assert np.max(np.linalg.norm(fitted - gt, axis=1)) / scene.scale < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(scene2_small):
    graph = oracle_graph(scene2_small, NoiseModel(point_sigma=0.05))
    cfg = AlignConfig(iterations=50, learning_rate=1e4, lr_schedule="constant", monotone=False)
    with pytest.raises(AlignmentDivergedError) as exc:
        align_pinhole(graph, cfg)
    assert not np.isfinite(exc.value.trace[-1])


def test_align_config_validation():
    with pytest.raises(ValueError):
        AlignConfig(iterations=0)
    with pytest.raises(ValueError):
        AlignConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        AlignConfig(mode="bundle")


@pytest.mark.xfail(strict=True, reason="first-order descent on a nonsmooth objective converges sublinearly from a 74 degree start")
def test_identity_start_reaches_tiny_relative_loss():
    scene = generate_scene(default_scene_spec(num_views=2, seed=0))
    graph = oracle_graph(scene)
    init = initialize_pinhole(graph)
    start = PinholeInit(init.focals, [RigidPose.identity()] * 2, init.depths, init.self_maps, [SimTransform()] * len(init.edges))
    res = align_pinhole(graph, init=start)
    assert res.loss_trace[-1] < 1e-6 * res.loss_trace[0]


# depth aggregation


def test_lower_median():
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0
    assert lower_median([5.0]) == 5.0
    with pytest.raises(ValueError):
        lower_median([])


def test_aggregate_single_prediction_unchanged(rng):
    D = DepthMap(rng.uniform(1, 5, (6, 6)), rng.random((6, 6)) > 0.2)
    out = aggregate_depths([(D, ConfidenceMap(np.full((6, 6), 2.0)))])
    assert out is D


def test_aggregate_cancels_scale(rng):
    D = DepthMap(rng.uniform(1, 5, (6, 6)))
    C = ConfidenceMap(rng.uniform(1, 3, (6, 6)))
    out = aggregate_depths([(D, C), (D.scaled(2.0), C)])
    assert np.allclose(out.depth, D.depth, rtol=1e-15)


def test_aggregate_drops_disjoint_prediction(rng):
    a = np.zeros((4, 4), bool)
    a[:2] = True
    D1 = DepthMap(rng.uniform(1, 5, (4, 4)), a)
    D2 = DepthMap(rng.uniform(1, 5, (4, 4)), ~a)
    C = ConfidenceMap(np.ones((4, 4)))
    out, dropped = aggregate_depths([(D1, C), (D2, C)], return_dropped=True)
    assert dropped == 1
    assert np.array_equal(out.depth[a], D1.depth[a])


def test_aggregate_reduces_error(scene5):
    gt = scene5.views[0].depth
    wins = []
    for seed in range(15):
        rng = np.random.default_rng(seed)
        preds = []
        for k in range(4):
            noisy = gt.depth * (1 + 0.05 * rng.normal(size=gt.depth.shape)) * rng.uniform(0.5, 2.0)
            preds.append((DepthMap(np.abs(noisy), gt.valid), ConfidenceMap(np.full(gt.depth.shape, 2.0))))
        fused = eval_depth(aggregate_depths(preds), gt).abs_rel
        single = min(eval_depth(D, gt).abs_rel for D, _ in preds)
        wins.append(fused <= single)
    assert np.median(wins) == 1
