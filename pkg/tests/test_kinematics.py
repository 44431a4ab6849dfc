import numpy as np
import pytest

from dance_retarget.errors import UnknownFrameError
from dance_retarget.kinematics import (
    centroidal_momentum_matrix,
    centroidal_momentum_matrix_dot,
    com_and_mass,
    com_jacobian,
    compute_kinematics,
    configuration_difference,
    frame_jacobian,
    frame_pose,
    integrate_configuration,
    point_jacobian,
)
from dance_retarget.spatial import se3_log, so3_log

from tests.conftest import random_configuration, random_velocity

EPS = 1e-6


def _link_momenta(model, q, v):
    """Total momentum about the CoM summed link by link from finite-difference link motion."""
    ahead = compute_kinematics(model, integrate_configuration(q, v, EPS))
    behind = compute_kinematics(model, integrate_configuration(q, -v, EPS))
    data = compute_kinematics(model, q)
    com, _ = com_and_mass(model, q, data)
    linear, angular = np.zeros(3), np.zeros(3)
    for link in range(model.n_links):
        mass = model.masses[link]
        velocity = (ahead.coms[link] - behind.coms[link]) / (2 * EPS)
        omega = so3_log(ahead.rotations[link] @ behind.rotations[link].T) / (2 * EPS)
        rotation = data.rotations[link]
        inertia = rotation @ model.link_inertias[link] @ rotation.T
        linear += mass * velocity
        angular += np.cross(data.coms[link] - com, mass * velocity) + inertia @ omega
    return np.concatenate([linear, angular])


def test_cmm_matches_sum_of_link_momenta(model, rng):
    for _ in range(50):
        q = random_configuration(model, rng)
        v = random_velocity(model, rng)
        momentum = centroidal_momentum_matrix(model, q) @ v
        assert np.linalg.norm(momentum - _link_momenta(model, q, v)) / (1 + np.linalg.norm(v)) < 1e-6


def test_cmm_linear_rows_are_mass_times_com_jacobian(model, rng):
    q = random_configuration(model, rng)
    cmm = centroidal_momentum_matrix(model, q)
    assert np.allclose(cmm[0:3], model.total_mass * com_jacobian(model, q), atol=1e-12)


def test_cmm_dot_matches_difference_of_momentum_matrices(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng, 0.5)
    step = 1e-7
    expected = (
        centroidal_momentum_matrix(model, integrate_configuration(q, v, step))
        - centroidal_momentum_matrix(model, q)
    ) / step
    assert np.allclose(centroidal_momentum_matrix_dot(model, q, v), expected, atol=1e-3)


def test_local_frame_jacobian_matches_se3_log(model, rng):
    q = random_configuration(model, rng)
    dq = 1e-6 * rng.normal(size=model.nv)
    for frame in ("left_foot", "right_hand", "head"):
        before = frame_pose(model, q, frame)
        after = frame_pose(model, integrate_configuration(q, dq, 1.0), frame)
        twist = se3_log(before.inverse() * after).vector
        predicted = frame_jacobian(model, q, frame) @ dq
        assert np.allclose(twist, predicted, atol=1e-10)


def test_world_frame_jacobian_gives_origin_velocity(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng)
    ahead = frame_pose(model, integrate_configuration(q, v, EPS), "left_foot").translation
    behind = frame_pose(model, integrate_configuration(q, -v, EPS), "left_foot").translation
    jacobian = frame_jacobian(model, q, "left_foot", reference="world")
    assert np.allclose(jacobian[0:3] @ v, (ahead - behind) / (2 * EPS), atol=1e-6)


def test_point_jacobian_of_sole_vertex(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng)
    vertex = model.feet["right"].vertices[0]

    def world_vertex(configuration):
        pose = frame_pose(model, configuration, "right_foot")
        return pose.act(vertex)

    velocity = (world_vertex(integrate_configuration(q, v, EPS)) - world_vertex(integrate_configuration(q, -v, EPS))) / (2 * EPS)
    assert np.allclose(point_jacobian(model, q, "right_foot", vertex) @ v, velocity, atol=1e-6)


def test_com_jacobian_gives_com_velocity(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng)
    ahead, _ = com_and_mass(model, integrate_configuration(q, v, EPS))
    behind, _ = com_and_mass(model, integrate_configuration(q, -v, EPS))
    assert np.allclose(com_jacobian(model, q) @ v, (ahead - behind) / (2 * EPS), atol=1e-6)


def test_configuration_difference_inverts_integration(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng, 0.3)
    moved = integrate_configuration(q, v, 1.0)
    assert np.allclose(configuration_difference(q, moved), v, atol=1e-10)


def test_unknown_frame_in_jacobian(model):
    with pytest.raises(UnknownFrameError):
        frame_jacobian(model, model.nominal_configuration(), "tail")


def test_invalid_jacobian_reference(model):
    with pytest.raises(ValueError):
        frame_jacobian(model, model.nominal_configuration(), "head", reference="body")
