import numpy as np
import pytest

from pmrecon.geometry import Intrinsics, RigidPose, axis_angle_to_quat, quat_to_matrix, rotation_angle
from pmrecon.recovery import PoseNotFoundError, RansacConfig, epnp, p3p_four, pnp_ransac
from pmrecon.recovery.pnp import refine_pose, reprojection_errors

from conftest import pnp_case, random_pose


def _pose_errors(pose, view, scale):
    rot = np.degrees(rotation_angle(pose.R @ view.pose.R.T))
    trans = np.linalg.norm(pose.center - view.pose.center) / scale
    return rot, trans


def _synthetic(rng, n=40, planar=False):
    K = Intrinsics(500.0, (320.0, 240.0))
    P = random_pose(rng, t_scale=0.5)
    cam = rng.uniform([-2, -2, 4], [2, 2, 8], size=(n, 3))
    if planar:
        cam[:, 2] = 6.0 + 0.3 * cam[:, 0]
    X = P.inverse().apply(cam)
    return X, K.project(cam), K, P


def test_epnp_noiseless(rng):
    for planar in (False, True):
        X, uv, K, P = _synthetic(rng, planar=planar)
        R, t = epnp(X, uv, K)
        assert np.degrees(rotation_angle(R @ P.R.T)) < 1e-6
        assert np.allclose(t, P.translation, atol=1e-6)


def test_p3p_four_noiseless(rng):
    for _ in range(20):
        X, uv, K, P = _synthetic(rng, n=4)
        R, t = p3p_four(X, uv, K)
        assert np.degrees(rotation_angle(R @ P.R.T)) < 1e-5
        assert np.allclose(t, P.translation, atol=1e-5)


def test_refinement_reduces_reprojection_error(rng):
    X, uv, K, P = _synthetic(rng)
    uv = uv + rng.normal(size=uv.shape) * 0.5
    R0 = P.R @ np.array([[1, -0.02, 0], [0.02, 1, 0], [0, 0, 1]])
    R, t = refine_pose(R0, P.translation + 0.05, X, uv, K)
    assert np.sum(reprojection_errors(R, t, X, uv, K) ** 2) < np.sum(reprojection_errors(R0, P.translation + 0.05, X, uv, K) ** 2)


def _exp(w):
    angle = np.linalg.norm(w)
    return quat_to_matrix(axis_angle_to_quat(w, angle)) if angle > 0 else np.eye(3)


def test_refinement_converges_quadratically(rng):
    X, uv, K, P = _synthetic(rng, n=60)
    P = RigidPose(P.rotation, P.translation + [3.0, -2.0, 1.0])
    X = P.inverse().apply(np.column_stack([(uv - 240.0) / 500.0, np.ones(len(uv))]) * rng.uniform(4, 8, (len(uv), 1)))
    uv = K.project(P.apply(X)) + rng.normal(size=uv.shape) * 1.0
    R0 = _exp(np.array([0.03, -0.02, 0.01])) @ P.R

    def cost(iterations):
        R, t = refine_pose(R0, P.translation, X, uv, K, iterations=iterations)
        return np.sum(reprojection_errors(R, t, X, uv, K) ** 2), R, t

    best, R, t = cost(50)
    assert cost(3)[0] <= best * (1 + 1e-10)
    for _ in range(30):
        w, dt = rng.normal(size=3) * 1e-4, rng.normal(size=3) * 1e-4
        assert np.sum(reprojection_errors(_exp(w) @ R, _exp(w) @ t + dt, X, uv, K) ** 2) >= best * (1 - 1e-12)


def test_weights_remove_a_corrupted_point(rng):
    X, uv, K, P = _synthetic(rng)
    uv = uv.copy()
    uv[0] += [2.5, -1.0]
    w = np.ones(len(X))
    w[0] = 0.0
    R, t = refine_pose(P.R @ _exp(np.array([0.0, 0.01, 0.0])), P.translation, X, uv, K, iterations=50, weights=w)
    assert np.degrees(rotation_angle(R @ P.R.T)) < 1e-8


def test_outlier_inside_threshold_does_not_bias_pose(rng):
    X, uv, K, P = _synthetic(rng, n=80)
    uv = uv.copy()
    uv[:3] += [[2.0, 1.0], [-1.5, 2.5], [0.0, -3.0]]
    pose, mask = pnp_ransac(uv, X, K, RansacConfig(rng_seed=1))
    assert mask[:3].all()
    assert np.degrees(rotation_angle(pose.R @ P.R.T)) < 1e-6
    assert np.linalg.norm(pose.center - P.center) < 1e-6


def test_noiseless_oracle_pnp():
    for seed in range(10):
        uv, X, view, _, scale = pnp_case(seed, outlier_rate=0.0)
        pose, mask = pnp_ransac(uv, X, view.intrinsics, RansacConfig(rng_seed=seed))
        rot, trans = _pose_errors(pose, view, scale)
        assert rot < 0.01
        assert trans < 1e-4
        assert mask.all()


def test_outliers_are_rejected():
    uv, X, view, bad, scale = pnp_case(3, outlier_rate=0.3)
    pose, mask = pnp_ransac(uv, X, view.intrinsics, RansacConfig(rng_seed=7))
    rot, trans = _pose_errors(pose, view, scale)
    assert rot < 1e-4 and trans < 1e-6
    # every clean correspondence is an inlier; corrupted ones rarely reproject within 4 px
    assert mask[~bad].all()
    assert mask[bad].mean() < 0.05


def test_bit_reproducible():
    uv, X, view, _, _ = pnp_case(5)
    a, ma = pnp_ransac(uv, X, view.intrinsics, RansacConfig(rng_seed=11))
    b, mb = pnp_ransac(uv, X, view.intrinsics, RansacConfig(rng_seed=11))
    assert np.array_equal(a.rotation, b.rotation)
    assert np.array_equal(a.translation, b.translation)
    assert np.array_equal(ma, mb)


def test_preconditions(rng):
    X, uv, K, _ = _synthetic(rng, n=3)
    with pytest.raises(ValueError, match="at least 4"):
        pnp_ransac(uv, X, K)
    with pytest.raises(ValueError):
        RansacConfig(max_iterations=0)
    with pytest.raises(ValueError):
        RansacConfig(inlier_threshold=0.0)


def test_pose_not_found(rng):
    X = rng.normal(size=(30, 3)) + [0, 0, 5]
    uv = rng.uniform(0, 640, size=(30, 2))
    with pytest.raises(PoseNotFoundError, match="pose not found"):
        pnp_ransac(uv, X, Intrinsics(500.0, (320.0, 240.0)), RansacConfig(max_iterations=50, inlier_threshold=1e-6))
