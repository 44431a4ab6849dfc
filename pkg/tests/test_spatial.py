import numpy as np
import pytest

from dance_retarget.errors import SingularityError
from dance_retarget.spatial import (
    Pose,
    Twist,
    interpolate_pose,
    se3_exp,
    se3_log,
    skew,
    slerp,
    so3_exp,
    so3_log,
)


def random_pose(rng):
    quaternion = rng.normal(size=4)
    return Pose(quaternion / np.linalg.norm(quaternion), rng.normal(size=3))


def test_skew_is_cross_product(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(skew(a) @ b, np.cross(a, b))


def test_so3_exp_of_log_recovers_rotation(rng):
    for _ in range(20):
        omega = rng.uniform(-1.0, 1.0, size=3)
        assert np.allclose(so3_log(so3_exp(omega)), omega, atol=1e-12)


def test_so3_exp_small_angle_branch_is_orthonormal():
    rotation = so3_exp(np.array([1e-6, -2e-6, 5e-7]))
    assert np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-12)


def test_se3_log_inverts_exp(rng):
    twist = Twist(angular=np.array([0.3, -0.2, 0.5]), linear=np.array([0.1, 0.4, -0.3]))
    recovered = se3_log(se3_exp(twist))
    assert np.allclose(recovered.vector, twist.vector, atol=1e-12)


def test_se3_log_raises_near_half_turn():
    half_turn = Pose.from_rotation_matrix(so3_exp(np.array([0.0, 0.0, np.pi - 1e-9])))
    with pytest.raises(SingularityError):
        se3_log(half_turn)


def test_pose_compose_with_inverse_is_identity(rng):
    pose = random_pose(rng)
    assert (pose * pose.inverse()).is_close(Pose.identity(), 1e-12)


def test_pose_act_matches_homogeneous_matrix(rng):
    pose = random_pose(rng)
    point = rng.normal(size=3)
    assert np.allclose(pose.act(point), (pose.matrix() @ np.append(point, 1.0))[:3])


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Pose(np.array([0.0, 0.0, 0.0, 2.0]))


def test_slerp_endpoints_and_midpoint():
    q0 = np.array([0.0, 0.0, 0.0, 1.0])
    q1 = np.array([0.0, 0.0, np.sin(0.5), np.cos(0.5)])
    assert np.allclose(slerp(q0, q1, 0.0), q0)
    assert np.allclose(slerp(q0, q1, 1.0), q1)
    middle = Pose(slerp(q0, q1, 0.5)).rotation_matrix
    assert np.allclose(so3_log(middle), [0.0, 0.0, 0.5], atol=1e-12)


def test_interpolate_pose_is_linear_in_translation(rng):
    a, b = random_pose(rng), random_pose(rng)
    middle = interpolate_pose(a, b, 0.25)
    assert np.allclose(middle.translation, 0.75 * a.translation + 0.25 * b.translation)
