import numpy as np
import pytest

from pmrecon.geometry import SimTransform, axis_angle_to_quat, rotation_angle
from pmrecon.oracle import NoiseModel, default_scene_spec, generate_scene, predict_pair
from pmrecon.pointmap import Pointmap
from pmrecon.recovery import DegenerateConfigurationError, absolute_pose, relative_pose

from conftest import world_points


def _rel_truth(scene, a, b):
    return scene.views[b].pose.compose(scene.views[a].pose.inverse())


def _rot_err(R, R_ref):
    return np.degrees(rotation_angle(R @ R_ref.T))


def test_relative_pose_procrustes_noiseless(scene5):
    for a, b in [(0, 1), (1, 3), (4, 2)]:
        T = relative_pose(predict_pair(scene5, a, b), predict_pair(scene5, b, a))
        truth = _rel_truth(scene5, a, b)
        assert abs(T.scale - 1) < 1e-6
        assert _rot_err(T.R, truth.R) < 1e-6
        assert np.allclose(T.translation, truth.translation, atol=1e-6)


def test_relative_pose_fixes_scale_of_arbitrary_frames(scene5):
    # each prediction lives in its own similarity frame; translation agrees up to scale
    s12 = SimTransform(2.5, axis_angle_to_quat([0, 0, 1], 0.0), np.zeros(3))
    T = relative_pose(predict_pair(scene5, 0, 1, similarity=s12), predict_pair(scene5, 1, 0))
    truth = _rel_truth(scene5, 0, 1)
    assert T.scale == pytest.approx(1 / 2.5, rel=1e-9)
    assert _rot_err(T.R, truth.R) < 1e-6
    assert np.allclose(T.scale * T.translation, truth.translation, atol=1e-6)


def test_relative_pose_identical_views(scene5):
    pair = predict_pair(scene5, 2, 2)
    T = relative_pose(pair, pair)
    assert abs(T.scale - 1) < 1e-12
    assert _rot_err(T.R, np.eye(3)) < 1e-9
    assert np.allclose(T.translation, 0, atol=1e-9)


def test_relative_pose_pnp_noiseless(scene5):
    T = relative_pose(predict_pair(scene5, 0, 1), predict_pair(scene5, 1, 0), method="pnp")
    truth = _rel_truth(scene5, 0, 1)
    scale = np.linalg.norm(truth.translation)
    assert _rot_err(T.R, truth.R) < 0.05
    assert np.linalg.norm(T.translation - truth.translation) / scale < 1e-2


def test_relative_pose_unknown_method(scene5):
    pair = predict_pair(scene5, 0, 1)
    with pytest.raises(ValueError):
        relative_pose(pair, pair, method="epipolar")


def test_absolute_pose_self_localization(scene5):
    db = scene5.views[1]
    pose = absolute_pose(predict_pair(scene5, 1, 1), world_points(db), db.pose, intrinsics=db.intrinsics)
    assert _rot_err(pose.R, db.pose.R) < 1e-6
    assert np.allclose(pose.translation, db.pose.translation, atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_absolute_pose_pnp_distinct_query(seed):
    # matched pixels of two views sample nearby, not identical, surface points;
    # the pose error is bounded by that sampling, so use a finer grid than 64x64
    scene = generate_scene(default_scene_spec(num_views=3, width=128, height=128, seed=seed))
    q, d = 2, 1
    db = scene.views[d]
    pose = absolute_pose(predict_pair(scene, q, d), world_points(db), db.pose)
    truth = scene.views[q].pose
    scale = np.mean(np.linalg.norm(world_points(scene.views[q]).valid_points() - truth.center, axis=1))
    assert np.linalg.norm(pose.center - truth.center) / scale < 1e-3


def test_absolute_pose_relative_path(scene5):
    q, d = 3, 2
    db = scene5.views[d]
    # predictions are metric camera frames up to an unknown per-pair scale
    pose = absolute_pose(
        predict_pair(scene5, q, d, similarity=SimTransform(0.3)),
        world_points(db),
        db.pose,
        method="relative",
        db_pair=predict_pair(scene5, d, q, similarity=SimTransform(4.0)),
    )
    truth = scene5.views[q].pose
    assert _rot_err(pose.R, truth.R) < 1e-6
    assert np.allclose(pose.translation, truth.translation, atol=1e-6)


def test_absolute_pose_sparse_database_scale(scene5):
    db = scene5.views[0]
    sparse = world_points(db)
    keep = np.zeros_like(sparse.valid)
    keep[np.nonzero(sparse.valid)[0][:2], np.nonzero(sparse.valid)[1][:2]] = True
    pair = predict_pair(scene5, 1, 0)
    with pytest.raises(DegenerateConfigurationError, match="scale"):
        absolute_pose(pair, Pointmap(sparse.points, keep), db.pose, method="relative", db_pair=predict_pair(scene5, 0, 1))


def test_pnp_path_beats_procrustes_under_outliers_is_recorded(scene5):
    # comparison only: both paths must still run on contaminated input
    noise = NoiseModel(point_sigma=0.005, outlier_rate=0.05, confidence_fidelity=0.0)
    p12, p21 = predict_pair(scene5, 0, 1, noise, seed=1), predict_pair(scene5, 1, 0, noise, seed=2)
    truth = _rel_truth(scene5, 0, 1)
    e_proc = _rot_err(relative_pose(p12, p21).R, truth.R)
    e_pnp = _rot_err(relative_pose(p12, p21, method="pnp").R, truth.R)
    assert np.isfinite(e_proc) and np.isfinite(e_pnp)
