import numpy as np
import pytest
from dataclasses import replace

from dance_retarget.centroidal import ContactSet
from dance_retarget.errors import ConfigError
from dance_retarget.motion import SupportLabel
from dance_retarget.ocp import (
    OcpProblem,
    OcpSettings,
    OcpWeights,
    ReferenceTrack,
    build_problem,
    initial_guess,
    shift_guess,
    _node_terms,
    solve_ocp,
)


@pytest.fixture(scope="module")
def contacts(model):
    return ContactSet.from_model(model)


@pytest.fixture(scope="module")
def track(model, standing, contacts):
    return ReferenceTrack.from_trajectory(model, standing, contacts)


def test_reference_track_needs_labels(model, standing, contacts):
    with pytest.raises(ConfigError, match="support label"):
        ReferenceTrack.from_trajectory(model, replace(standing, labels=None), contacts)


def test_reference_forces_carry_the_weight(model, track):
    assert len(track) == 21
    for u in track.inputs:
        assert u.forces[:, 2].sum() == pytest.approx(model.total_mass * 9.81)
    assert np.allclose(track.foot_heights, track.foot_heights[0])


def test_window_holds_the_last_node(track):
    states, inputs, labels, heights = track.window(18, 5)
    assert len(states) == 6 and len(inputs) == 5 and len(labels) == 6
    assert states[-1] is track.states[-1]
    assert np.allclose(inputs[-1].joint_velocities, 0.0)


def test_problem_dimensions(model, contacts, track):
    problem = build_problem(model, contacts, track, 0, 5, track.states[0])
    assert problem.n_intervals == 5
    assert problem.horizon == pytest.approx(0.1)
    assert problem.state_dim == 6 + model.nv
    assert problem.input_dim == 3 * 8 + model.n_q
    assert problem.force_scale == pytest.approx(model.total_mass * 9.81)


def test_problem_rejects_mismatched_references(model, contacts, track):
    problem = build_problem(model, contacts, track, 0, 5, track.states[0])
    with pytest.raises(ConfigError):
        OcpProblem(
            model, contacts, problem.dt, problem.references, problem.input_references[:-1], problem.labels,
            problem.foot_heights, problem.state_weights, problem.input_weights, problem.initial_state,
        )


@pytest.mark.parametrize(
    "settings",
    [
        OcpSettings(dt=0.0),
        OcpSettings(friction=-0.1),
        OcpSettings(max_iterations=0),
        OcpSettings(weights=OcpWeights(base=-1.0)),
    ],
)
def test_invalid_settings(settings):
    with pytest.raises(ConfigError):
        settings.validate()


def test_standing_reference_is_already_optimal(model, contacts, track):
    problem = build_problem(model, contacts, track, 0, 5, track.states[0])
    solution = solve_ocp(problem, max_iterations=5)
    assert solution.max_defect < 1e-6
    assert solution.max_violation < 1e-5
    assert solution.cost < 1e-3
    for state, reference in zip(solution.states, problem.references):
        assert np.max(np.abs(state.difference(reference))) < 1e-3


def test_solver_restores_a_perturbed_start(model, contacts, track):
    start = track.states[0].retract(np.concatenate([[0.05, 0.0, 0.0], np.zeros(track.states[0].dimension - 3)]))
    problem = build_problem(model, contacts, track, 0, 10, start)
    solution = solve_ocp(problem, max_iterations=30)
    assert np.max(np.abs(solution.states[0].difference(start))) < 1e-4
    assert solution.max_defect < 1e-3
    assert abs(solution.states[-1].com_velocity[0]) < abs(start.com_velocity[0])
    assert solution.history and solution.history[0]["iteration"] == 1


def test_shift_guess_keeps_the_horizon(model, contacts, track):
    problem = build_problem(model, contacts, track, 0, 5, track.states[0])
    solution = solve_ocp(problem, max_iterations=2)
    following = build_problem(model, contacts, track, 1, 5, solution.states[1])
    states, inputs = shift_guess(solution, following, 1)
    assert len(states) == 6 and len(inputs) == 5
    assert states[0] is following.initial_state
    guess_states, guess_inputs = initial_guess(following)
    assert len(guess_states) == 6 and len(guess_inputs) == 5


def test_single_support_windows_have_no_swing_force(model, contacts, standing):
    labels = [SupportLabel.DOUBLE] * 5 + [SupportLabel.LEFT] * 11 + [SupportLabel.DOUBLE] * 5
    stepping = ReferenceTrack.from_trajectory(model, standing, contacts, labels)
    problem = build_problem(model, contacts, stepping, 3, 5, stepping.states[3])
    solution = solve_ocp(problem, max_iterations=3)
    for k, u in enumerate(solution.inputs):
        if problem.labels[k] is SupportLabel.LEFT:
            assert np.allclose(u.forces[contacts.indices("right")], 0.0, atol=1e-2)


def _proxy_ratio(problem, states, inputs):
    """Largest |torque| / limit of the leg torque proxy over the intervals."""
    worst = 0.0
    for k in range(problem.n_intervals):
        terms = _node_terms(problem, k, states[k], inputs[k], derivatives=False)
        worst = max(worst, float(np.max(np.abs(terms.torque) / problem.torque_limits[terms.torque_joints])))
    return worst


@pytest.mark.slow
def test_tightened_torque_limits_are_enforced(model, contacts, track):
    reference = build_problem(model, contacts, track, 0, 5, track.states[0])
    ratio = _proxy_ratio(reference, *initial_guess(reference))
    assert ratio > 0.0
    settings = OcpSettings(torque_scale=0.8 * ratio, max_iterations=60)
    problem = build_problem(model, contacts, track, 0, 5, track.states[0], settings)
    assert _proxy_ratio(problem, *initial_guess(problem)) > 1.0
    solution = solve_ocp(problem)
    assert solution.max_violation < 1e-5
    assert _proxy_ratio(problem, solution.states, solution.inputs) <= 1.0 + 1e-4
