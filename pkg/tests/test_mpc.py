from dataclasses import replace

import numpy as np
import pytest

from dance_retarget.centroidal import ContactSet, discrete_dynamics, state_from_motion
from dance_retarget.kinematics import com_and_mass, compute_kinematics
from dance_retarget.model import Configuration
from dance_retarget.motion import SupportLabel
from dance_retarget.mpc import interpolate_reference, mpc_step, plan_difference
from dance_retarget.ocp import ReferenceTrack
from dance_retarget.spatial import Pose, axis_angle_matrix
from dance_retarget.stability import compute_zmp


@pytest.fixture(scope="module")
def contacts(model):
    return ContactSet.from_model(model)


@pytest.fixture(scope="module")
def plan(model, standing, contacts):
    track = ReferenceTrack.from_trajectory(model, standing, contacts)
    return mpc_step(model, contacts, track, 0.06, track.states[3], 5).plan


def ramped(plan):
    """The plan with joints and CoM moving linearly from node to node."""
    configurations = [Configuration(q.base, q.joints + 0.01 * k) for k, q in enumerate(plan.configurations)]
    coms = plan.coms + 0.1 * np.arange(plan.n_nodes)[:, None]
    return replace(plan, configurations=configurations, coms=coms)


def test_plan_starts_at_the_nearest_node(model, plan):
    assert plan.node == 3
    assert plan.start_time == pytest.approx(0.06)
    assert plan.n_nodes == 6
    assert plan.end_time == pytest.approx(0.16)
    assert plan.labels == [SupportLabel.DOUBLE] * 6
    nominal = model.nominal_configuration()
    for q in plan.configurations:
        assert np.allclose(q.joints, nominal.joints, atol=1e-3)
    assert plan.forces.shape == (6, 8, 3)
    assert np.allclose(plan.forces[:, :, 2].sum(axis=1), model.total_mass * 9.81, rtol=1e-2)


def test_warm_started_replan_agrees(model, standing, contacts, plan):
    track = ReferenceTrack.from_trajectory(model, standing, contacts)
    following = mpc_step(model, contacts, track, 0.08, plan.solution.states[1], 5, previous=plan).plan
    assert following.node == 4
    assert plan_difference(plan, following) < 1e-3


def test_interpolation_is_exact_at_nodes(plan):
    moving = ramped(plan)
    reference = interpolate_reference(moving, moving.start_time + 2 * moving.dt)
    assert reference.in_span
    assert np.allclose(reference.references.q.joints, moving.configurations[2].joints)
    assert np.allclose(reference.references.com, moving.coms[2])
    assert np.allclose(reference.feet, moving.feet[2])


def test_interpolation_is_linear_between_nodes(plan):
    moving = ramped(plan)
    reference = interpolate_reference(moving, moving.start_time + 1.5 * moving.dt)
    expected = 0.5 * (moving.configurations[1].joints + moving.configurations[2].joints)
    assert np.allclose(reference.references.q.joints, expected)
    assert np.allclose(reference.references.com, 0.5 * (moving.coms[1] + moving.coms[2]))
    assert reference.references.label is SupportLabel.DOUBLE


def test_outside_the_span_holds_the_end_node(plan):
    moving = ramped(plan)
    late = interpolate_reference(moving, moving.end_time + 0.5)
    early = interpolate_reference(moving, moving.start_time - 0.5)
    assert not late.in_span and not early.in_span
    assert np.allclose(late.references.q.joints, moving.configurations[-1].joints)
    assert np.allclose(early.references.q.joints, moving.configurations[0].joints)


def test_plan_difference(plan):
    assert plan_difference(plan, plan) == 0.0
    assert plan_difference(plan, ramped(plan)) == pytest.approx(0.01 * (plan.n_nodes - 1))


def test_torso_reference_follows_the_plan_base(plan):
    tilted = replace(
        plan,
        configurations=[
            Configuration(Pose.from_rotation_matrix(axis_angle_matrix(np.array([1.0, 0.0, 0.0]), 0.02 * k),
                                                    q.base.translation), q.joints)
            for k, q in enumerate(plan.configurations)
        ],
    )
    at_node = interpolate_reference(tilted, tilted.start_time + 2 * tilted.dt).references
    assert np.allclose(at_node.torso, tilted.configurations[2].base.rotation_matrix)
    between = interpolate_reference(tilted, tilted.start_time + 2.5 * tilted.dt).references
    assert np.allclose(between.torso, between.q.base.rotation_matrix)
    assert not np.allclose(between.torso, tilted.configurations[2].base.rotation_matrix)


def leaned(model, q, angle):
    """``q`` with the pelvis leaned sideways over feet that stay where they were."""
    names = [joint.name for joint in model.joints]
    joints = q.joints.copy()
    for side in ("left", "right"):
        joints[names.index(f"{side}_hip_roll")] += angle
        joints[names.index(f"{side}_ankle_roll")] -= angle
    foot = model.foot_link_index("left")
    before = compute_kinematics(model, q).positions[foot]
    moved = compute_kinematics(model, Configuration(q.base, joints)).positions[foot]
    return Configuration(Pose.from_rotation_matrix(q.base.rotation_matrix, q.base.translation + before - moved), joints)


def test_plan_restores_a_lateral_com_offset(model, standing, contacts):
    track = ReferenceTrack.from_trajectory(model, standing, contacts)
    n_intervals = 10
    q = leaned(model, track.states[0].q, 0.02)
    data, reference_data = compute_kinematics(model, q), compute_kinematics(model, track.states[0].q)
    points = contacts.points(data)
    assert np.allclose(points, contacts.points(reference_data), atol=1e-9)
    reference_com = com_and_mass(model, track.states[0].q)[0]
    offset = com_and_mass(model, q, data)[0][0:2] - reference_com[0:2]
    assert 5e-3 < np.linalg.norm(offset) < 2e-2
    direction = offset / np.linalg.norm(offset)

    estimate = state_from_motion(model, q, np.zeros(model.nv))
    plan = mpc_step(model, contacts, track, 0.0, estimate, n_intervals).plan

    # the first-node centre of pressure moves out past the reference one
    planned_zmp = compute_zmp(points, plan.forces[0])
    reference_zmp = compute_zmp(points, track.inputs[0].forces)
    assert (planned_zmp.xy - reference_zmp.xy) @ direction > 0.25 * np.linalg.norm(offset)

    # the reference inputs replayed from the offset state leave the CoM where it is
    x = estimate
    for k in range(n_intervals):
        x = discrete_dynamics(model, x, track.inputs[k], track.dt, contacts)
    unadjusted = com_and_mass(model, x.q)[0]
    # margin towards the offset: distance from the CoM to the outer edge of the support
    edge = np.max(points[:, 0:2] @ direction)
    plan_margin = edge - plan.coms[-1][0:2] @ direction
    unadjusted_margin = edge - unadjusted[0:2] @ direction
    assert unadjusted_margin == pytest.approx(edge - (reference_com[0:2] + offset) @ direction, abs=1e-4)
    assert plan_margin > unadjusted_margin
