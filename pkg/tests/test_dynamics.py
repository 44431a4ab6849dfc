import numpy as np
import pytest

from dance_retarget.dynamics import (
    GRAVITY,
    PointForce,
    contact_generalized_forces,
    forward_dynamics,
    frame_acceleration_bias,
    inverse_dynamics,
    mass_matrix,
    mass_matrix_and_bias,
    mechanical_energy,
)
from dance_retarget.kinematics import (
    centroidal_momentum_matrix,
    com_and_mass,
    com_jacobian,
    frame_jacobian,
    frame_pose,
    integrate_configuration,
    point_jacobian,
)

from tests.conftest import random_configuration, random_velocity


def test_mass_matrix_is_symmetric_positive_definite(model, rng):
    inertia = mass_matrix(model, random_configuration(model, rng))
    assert np.allclose(inertia, inertia.T)
    assert np.linalg.eigvalsh(inertia)[0] > 0.0


def test_base_block_of_mass_matrix_carries_total_mass(model, rng):
    inertia = mass_matrix(model, random_configuration(model, rng))
    assert np.allclose(inertia[0:3, 0:3], model.total_mass * np.eye(3))


def test_inverse_dynamics_inverts_forward_dynamics(model, rng):
    for _ in range(10):
        q = random_configuration(model, rng)
        v = random_velocity(model, rng)
        tau = rng.normal(scale=20.0, size=model.n_q)
        a = forward_dynamics(model, q, v, tau)
        residual = inverse_dynamics(model, q, v, a)
        assert np.allclose(residual[6:], tau, atol=1e-8)
        assert np.allclose(residual[0:6], 0.0, atol=1e-8)


def test_free_fall_accelerates_com_at_gravity(model, rng):
    q = random_configuration(model, rng)
    a = forward_dynamics(model, q, np.zeros(model.nv), np.zeros(model.n_q))
    assert np.allclose(com_jacobian(model, q) @ a, GRAVITY, atol=1e-9)
    angular_rate = centroidal_momentum_matrix(model, q)[3:6] @ a
    assert np.allclose(angular_rate, 0.0, atol=1e-8)


def test_bias_with_zero_velocity_is_gravity_load(model, rng):
    q = random_configuration(model, rng)
    _, bias = mass_matrix_and_bias(model, q, np.zeros(model.nv))
    assert np.allclose(bias[0:3] @ (q.base.rotation_matrix.T @ GRAVITY), -model.total_mass * 9.81**2)


def test_frame_acceleration_bias_matches_jacobian_derivative(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng, 0.5)
    step = 1e-6
    ahead = frame_jacobian(model, integrate_configuration(q, v, step), "left_foot", reference="world")
    behind = frame_jacobian(model, integrate_configuration(q, -v, step), "left_foot", reference="world")
    expected = (ahead - behind) @ v / (2 * step)
    assert np.allclose(frame_acceleration_bias(model, q, v, "left_foot"), expected, atol=1e-5)


def test_contact_forces_do_virtual_work_at_their_point(model, rng):
    q = random_configuration(model, rng)
    v = random_velocity(model, rng)
    vertex = model.feet["left"].vertices[0]
    jacobian = point_jacobian(model, q, "left_foot", vertex)
    point = frame_pose(model, q, "left_foot").act(vertex)
    force = np.array([3.0, -2.0, 40.0])
    generalized = contact_generalized_forces(model, q, [PointForce("left_foot", point, force)])
    assert v @ generalized == pytest.approx(force @ (jacobian @ v))


def test_potential_energy_is_weight_times_com_height(model, rng):
    q = random_configuration(model, rng)
    com, mass = com_and_mass(model, q)
    kinetic, potential = mechanical_energy(model, q, np.zeros(model.nv))
    assert kinetic == 0.0
    assert potential == pytest.approx(mass * 9.81 * com[2])


def test_standing_support_balances_gravity(two_leg_model):
    q = two_leg_model.nominal_configuration()
    weight = two_leg_model.total_mass * 9.81
    forces = []
    for side in ("left", "right"):
        link = two_leg_model.feet[side].link
        pose = frame_pose(two_leg_model, q, link)
        for vertex in two_leg_model.feet[side].vertices:
            forces.append(PointForce(link, pose.act(vertex), np.array([0.0, 0.0, weight / 8])))
    residual = inverse_dynamics(two_leg_model, q, np.zeros(two_leg_model.nv), np.zeros(two_leg_model.nv), forces)
    assert np.allclose(residual[0:6], 0.0, atol=1e-9)
