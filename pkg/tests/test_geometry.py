import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmrecon.geometry import (
    ImageSize,
    Intrinsics,
    RigidPose,
    SimTransform,
    axis_angle_to_quat,
    matrix_to_quat,
    quat_matrix_jacobian,
    quat_multiply,
    quat_to_matrix,
    random_quat,
    rotation_angle,
)

from conftest import random_pose

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_image_size_rejects_empty():
    with pytest.raises(ValueError):
        ImageSize(0, 4)
    assert ImageSize(5, 3).shape == (3, 5)
    assert ImageSize(5, 3).num_pixels == 15


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, (1.0, 1.0))
    with pytest.raises(ValueError):
        Intrinsics(float("nan"), (1.0, 1.0))


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_quaternion_matrix_round_trip(seed):
    rng = np.random.default_rng(seed)
    q = random_quat(rng)
    R = quat_to_matrix(q)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    q2 = matrix_to_quat(R)
    assert q2[0] >= 0
    assert np.allclose(q2, q if q[0] >= 0 else -q, atol=1e-12)


def test_quaternion_product_matches_matrix_product(rng):
    for _ in range(20):
        a, b = random_quat(rng), random_quat(rng)
        assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_quat_jacobian_matches_finite_differences(rng):
    q = rng.normal(size=4)
    J = quat_matrix_jacobian(q)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        # derivative of the polynomial entries, no renormalization
        num = (_raw_matrix(q + e) - _raw_matrix(q - e)) / (2 * h)
        assert np.allclose(num, J[k], atol=1e-6)


def _raw_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def test_rotation_angle_of_axis_angle():
    for deg in (0.0, 1e-6, 10.0, 90.0, 179.0, 180.0):
        q = axis_angle_to_quat([1.0, 2.0, -0.5], np.radians(deg))
        assert rotation_angle(quat_to_matrix(q)) == pytest.approx(np.radians(deg), abs=1e-9)


def test_rigid_pose_group_laws(rng):
    for _ in range(20):
        a, b, c = (random_pose(rng) for _ in range(3))
        x = rng.normal(size=(10, 3))
        assert np.allclose(a.inverse().apply(a.apply(x)), x, atol=1e-12)
        assert np.allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)
        lhs = a.compose(b).compose(c).apply(x)
        rhs = a.compose(b.compose(c)).apply(x)
        assert np.allclose(lhs, rhs, atol=1e-12)
        assert abs(np.linalg.norm(a.compose(b).rotation) - 1) < 1e-12


def test_rigid_pose_center_maps_to_origin(rng):
    P = random_pose(rng)
    assert np.allclose(P.apply(P.center[None])[0], 0.0, atol=1e-12)


def test_sim_transform_inverse_and_compose(rng):
    for _ in range(20):
        S = SimTransform(rng.uniform(0.2, 5.0), random_quat(rng), rng.normal(size=3))
        T = SimTransform(rng.uniform(0.2, 5.0), random_quat(rng), rng.normal(size=3))
        x = rng.normal(size=(7, 3))
        assert np.allclose(S.inverse().apply(S.apply(x)), x, atol=1e-9)
        assert np.allclose(S.compose(T).apply(x), S.apply(T.apply(x)), atol=1e-9)


def test_sim_transform_rejects_bad_scale():
    with pytest.raises(ValueError):
        SimTransform(0.0)
    with pytest.raises(ValueError):
        SimTransform(-1.0)
