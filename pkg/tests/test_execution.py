from dataclasses import replace

import numpy as np
import pytest

from dance_retarget.errors import ConfigError, FormatError
from dance_retarget.estimator import SensorNoise
from dance_retarget.execution import (
    Disturbance,
    ExecutionConfig,
    ExecutionContext,
    ExecutionTrace,
    PlanMailbox,
    inject_disturbance,
    parse_disturbance,
    pd_feedforward_torque,
    run_execution,
)
from dance_retarget.kinematics import centroidal_momentum_matrix, compute_kinematics
from dance_retarget.model import Configuration
from dance_retarget.simulator import SimWorld, initial_state, sim_step
from dance_retarget.spatial import Pose


def small_trace():
    arrays = {
        "time": np.array([0.001, 0.002]),
        "q": np.array([[0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.1, 0.2]] * 2),
        "q_ref": np.zeros((2, 2)),
        "margin": np.array([0.05, np.nan]),
    }
    events = [{"time": 0.001, "kind": "touchdown", "side": "left", "dx": 0.03, "dy": 0.04}]
    return ExecutionTrace(
        ["left_hip", "right_hip"],
        {"left": np.array([0]), "right": np.array([1])},
        arrays,
        ["DoubleSupport", "LeftSupport"],
        events,
        np.array([2.5, np.nan]),
    )


def test_parse_push():
    push = parse_disturbance("30, 0, -5@1.5+0.1")
    assert np.allclose(push.force, [30.0, 0.0, -5.0])
    assert push.start == pytest.approx(1.5)
    assert push.duration == pytest.approx(0.1)
    assert push.active(1.55) and not push.active(1.6)
    assert np.allclose(push.impulse, [3.0, 0.0, -0.5])


@pytest.mark.parametrize("text", ["30,0@1+0.1", "a,b,c@1+0.1", "30,0,0@1"])
def test_malformed_push_is_rejected(text):
    with pytest.raises(ConfigError, match="cannot parse push"):
        parse_disturbance(text)


def test_push_duration_must_be_non_negative():
    with pytest.raises(ConfigError):
        Disturbance(np.zeros(3), 0.0, -0.1)


def test_pd_torque_is_clamped():
    tau = pd_feedforward_torque(
        np.array([1.0, 0.0]), np.array([0.1, 0.0]), np.zeros(2), np.zeros(2), np.array([0.0, 1.0]),
        100.0, 2.0, np.array([5.0, 5.0]),
    )
    assert np.allclose(tau, [5.0, -2.0])
    assert np.allclose(pd_feedforward_torque(np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1), 100.0, 0.0),
                       [100.0])


def test_rates_must_divide_the_physics_rate():
    with pytest.raises(ConfigError, match="divide"):
        ExecutionConfig(wbc_rate=300).validate()
    with pytest.raises(ConfigError, match="shorter than two"):
        ExecutionConfig(horizon=0.02).validate()
    assert ExecutionConfig().wbc_every == 2
    assert ExecutionConfig().mpc_every == 20


def test_push_outside_the_span_is_rejected():
    context = ExecutionContext(1.0)
    with pytest.raises(ConfigError, match="outside the simulated span"):
        inject_disturbance(context, Disturbance(np.ones(3), 1.0, 0.1))
    inject_disturbance(context, Disturbance(np.ones(3), 0.5, 0.1))
    assert context.events[0]["kind"] == "push"
    assert context.events[0]["frame"] == "base"


def test_pushes_default_to_the_base(model):
    context = ExecutionContext(1.0, [Disturbance([10.0, 0.0, 0.0], 0.0, 0.5)])
    q = model.nominal_configuration()
    data = compute_kinematics(model, q)
    (push,) = context.pushes(model, data, 0.2)
    assert push.frame == model.links[0].name
    assert np.allclose(push.point, q.base.translation)
    assert context.pushes(model, data, 0.6) == []


def test_mailbox_keeps_only_the_latest():
    mailbox = PlanMailbox()
    assert mailbox.latest() is None
    assert mailbox.take_request(timeout=0.01) is None
    mailbox.request(0.1, "first")
    mailbox.request(0.2, "second")
    assert mailbox.take_request(timeout=0.01) == (0.2, "second")
    assert mailbox.take_request(timeout=0.01) is None
    mailbox.publish("plan")
    assert mailbox.latest() == "plan"
    mailbox.stop()
    assert mailbox.stopped


def test_trace_summary():
    summary = small_trace().summary()
    assert summary["min_margin"] == pytest.approx(0.05)
    assert summary["stance_leg_rms"] == pytest.approx(np.sqrt(0.02))
    assert summary["swing_leg_rms"] == pytest.approx(0.2)
    assert summary["joint_rms"] == pytest.approx(np.sqrt(0.025))
    assert summary["max_touchdown_displacement"] == pytest.approx(0.05)
    assert summary["events"] == {"touchdown": 1}
    assert summary["mean_solve_ms"] == pytest.approx(2.5)
    assert "mean_solve_ms" not in small_trace().summary(include_timing=False)


def test_trace_file(tmp_path):
    path = small_trace().save(tmp_path / "runs" / "trace.npz")
    restored = ExecutionTrace.load(path)
    assert restored.labels == ["DoubleSupport", "LeftSupport"]
    assert restored.touchdowns()[0]["side"] == "left"
    assert np.allclose(restored.arrays["q"], small_trace().arrays["q"])
    assert restored.summary() == small_trace().summary()


def test_garbage_trace_is_a_format_error(tmp_path):
    path = tmp_path / "trace.npz"
    path.write_text("not a trace")
    with pytest.raises(FormatError):
        ExecutionTrace.load(path)


@pytest.mark.parametrize("carpet, max_penetration", [(False, 5e-3), (True, 2e-2)])
def test_standing_closed_loop(model, standing, carpet, max_penetration):
    config = ExecutionConfig(horizon=0.1, duration=0.1, noise=SensorNoise.noiseless())
    trace = run_execution(model, standing, world=SimWorld(carpet=carpet), config=config)
    assert not trace.fell
    assert len(trace.time) == 100
    assert trace.time[-1] == pytest.approx(0.1)
    assert np.all(trace.arrays["tilt"] < 0.05)
    assert abs(trace.arrays["com"][-1, 2] - trace.arrays["com"][0, 2]) < 0.02
    assert np.max(trace.arrays["penetration"]) < max_penetration
    frame = trace.to_frame()
    assert len(frame) == 100
    assert set(frame["label"]) == {"DoubleSupport"}

    # MPC on every 20th tick, WBC on every 2nd with the torque held in between
    assert np.array_equal(np.flatnonzero(np.isfinite(trace.solve_ms)), np.arange(0, 100, 20))
    residual = trace.arrays["wbc_residual"]
    assert np.array_equal(np.flatnonzero(np.isfinite(residual)), np.arange(0, 100, 2))
    assert np.nanmax(residual) < 1e-6
    assert "wbc fallback" not in trace.summary()["events"]
    assert np.array_equal(trace.arrays["tau"][1::2], trace.arrays["tau"][0::2])


def test_execution_needs_labels(model, standing):
    with pytest.raises(ConfigError, match="support labels"):
        run_execution(model, replace(standing, labels=None), config=ExecutionConfig(horizon=0.1, duration=0.1))


def test_touchdown_shift_is_signed_along_the_push():
    trace = small_trace()
    assert trace.summary()["touchdown_shift_along_push"] is None
    trace.events.insert(0, {"time": 0.0, "kind": "push", "force": [0.0, -20.0, 0.0], "duration": 0.1, "frame": "base"})
    assert trace.touchdown_shift_along_push() == pytest.approx(-0.04)
    trace.events.append({"time": 0.002, "kind": "touchdown", "side": "right", "dx": 0.0, "dy": -0.03})
    assert trace.summary()["touchdown_shift_along_push"] == pytest.approx(0.03)


def test_zero_push_leaves_the_run_unchanged(model, standing):
    config = ExecutionConfig(horizon=0.1, duration=0.04, noise=SensorNoise.noiseless())
    plain = run_execution(model, standing, config=config)
    pushed = run_execution(model, standing, config=config, disturbances=[Disturbance(np.zeros(3), 0.01, 0.02)])
    assert [e for e in pushed.events if e["kind"] != "push"] == plain.events
    assert plain.arrays.keys() == pushed.arrays.keys()
    for key, values in plain.arrays.items():
        assert np.array_equal(values, pushed.arrays[key], equal_nan=True), key


def test_base_push_delivers_its_impulse(two_leg_model):
    world = SimWorld(gravity=np.zeros(3))
    push = Disturbance([10.0, 0.0, 0.0], 0.0, 0.05)
    context = ExecutionContext(0.1, [push])
    state = initial_state(two_leg_model, Configuration(Pose(translation=[0.0, 0.0, 2.0]), np.zeros(2)))
    dt, active_ticks = world.physics_step, 0
    for tick in range(100):
        t = tick * dt
        active_ticks += push.active(t)
        pushes = context.pushes(two_leg_model, compute_kinematics(two_leg_model, state.q), t)
        state = sim_step(world, two_leg_model, state, np.zeros(2), pushes=pushes).state
    momentum = (centroidal_momentum_matrix(two_leg_model, state.q) @ state.v)[0:3]
    assert momentum == pytest.approx(push.force * dt * active_ticks, abs=1e-4)
    assert momentum[0] == pytest.approx(push.impulse[0], rel=1e-2)


def test_overlapping_pushes_add_up(two_leg_model):
    q = Configuration(Pose(translation=[0.0, 0.0, 2.0]), np.array([0.2, -0.1]))
    data = compute_kinematics(two_leg_model, q)
    overlapping = ExecutionContext(1.0, [Disturbance([5.0, 0.0, 0.0], 0.0, 0.5), Disturbance([0.0, 3.0, 1.0], 0.2, 0.5)])
    combined = ExecutionContext(1.0, [Disturbance([5.0, 3.0, 1.0], 0.0, 1.0)])
    state = initial_state(two_leg_model, q)
    split = sim_step(SimWorld(), two_leg_model, state, np.zeros(2), pushes=overlapping.pushes(two_leg_model, data, 0.3))
    joint = sim_step(SimWorld(), two_leg_model, state, np.zeros(2), pushes=combined.pushes(two_leg_model, data, 0.3))
    assert len(overlapping.pushes(two_leg_model, data, 0.3)) == 2
    assert np.allclose(split.acceleration, joint.acceleration, atol=1e-12)
    assert np.allclose(split.state.v, joint.state.v, atol=1e-12)
