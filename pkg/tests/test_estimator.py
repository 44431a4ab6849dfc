import numpy as np
import pytest

from dance_retarget.errors import ConfigError
from dance_retarget.estimator import (
    EstimatedState,
    EstimatorConfig,
    SensorNoise,
    estimate_state,
    estimation_error,
    heading,
    read_sensors,
    wrap_angle,
)
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import axis_angle_matrix

DT = 0.002


def stand_and_estimate(model, noise, config, seconds, rng):
    """Feed the readings of a robot standing still to the filter."""
    q = model.nominal_configuration()
    v = np.zeros(model.nv)
    estimate = EstimatedState.from_truth(q, v)
    for k in range(int(round(seconds / DT))):
        sensors = read_sensors(q, v, np.zeros(model.nv), (k + 1) * DT, noise, rng)
        estimate = estimate_state(model, estimate, sensors, SupportLabel.DOUBLE, DT, config)
    return estimation_error(estimate, q, v)


def test_at_rest_the_accelerometer_reads_gravity(model, rng):
    q = model.nominal_configuration()
    sensors = read_sensors(q, np.zeros(model.nv), np.zeros(model.nv), 0.0, SensorNoise.noiseless(), rng)
    assert np.allclose(sensors.accelerometer, [0.0, 0.0, 9.81])
    assert np.allclose(sensors.gyro, 0.0)
    assert np.allclose(sensors.joint_positions, q.joints)


def test_noiseless_standing_estimate_stays_exact(model, rng):
    angle, position, velocity = stand_and_estimate(model, SensorNoise.noiseless(), EstimatorConfig(), 1.0, rng)
    assert angle < 1e-9
    assert position < 1e-9
    assert velocity < 1e-9


def test_tilt_correction_bounds_gyro_bias(model, rng):
    noise = SensorNoise(0.0, 0.0, 0.0, 0.0, gyro_bias=np.array([0.01, 0.0, 0.0]))
    corrected, _, _ = stand_and_estimate(model, noise, EstimatorConfig(), 5.0, rng)
    drifting, _, _ = stand_and_estimate(model, noise, EstimatorConfig(tilt_gain=0.0), 5.0, rng)
    assert corrected < np.radians(0.5)
    assert drifting == pytest.approx(0.05, rel=1e-2)


def test_leg_kinematics_stop_accelerometer_drift(model, rng):
    noise = SensorNoise(0.0, 0.0, 0.0, 0.0, accel_bias=np.array([0.1, 0.0, 0.0]))
    _, open_loop, _ = stand_and_estimate(model, noise, EstimatorConfig(tilt_gain=0.0, kinematic_correction=False), 1.0, rng)
    _, corrected, _ = stand_and_estimate(model, noise, EstimatorConfig(tilt_gain=0.0), 1.0, rng)
    assert open_loop > 0.03
    assert corrected < 0.01


def test_stance_feet_are_latched(model, rng):
    q = model.nominal_configuration()
    v = np.zeros(model.nv)
    sensors = read_sensors(q, v, np.zeros(model.nv), DT, SensorNoise.noiseless(), rng)
    estimate = estimate_state(model, EstimatedState.from_truth(q, v), sensors, {"left": True}, DT)
    assert set(estimate.latches) == {"left"}


def test_heading_and_angle_wrapping():
    assert heading(axis_angle_matrix(np.array([0.0, 0.0, 1.0]), 0.3)) == pytest.approx(0.3)
    assert wrap_angle(3.0 * np.pi / 2.0) == pytest.approx(-np.pi / 2.0)
    assert wrap_angle(-0.1) == pytest.approx(-0.1)


def test_update_needs_positive_dt(model, rng):
    q = model.nominal_configuration()
    v = np.zeros(model.nv)
    sensors = read_sensors(q, v, np.zeros(model.nv), 0.0, SensorNoise.noiseless(), rng)
    with pytest.raises(ValueError):
        estimate_state(model, EstimatedState.from_truth(q, v), sensors, SupportLabel.DOUBLE, 0.0)


def test_truth_has_no_error(model, rng):
    q = model.nominal_configuration()
    v = 0.1 * rng.normal(size=model.nv)
    estimate = EstimatedState.from_truth(q, v)
    assert estimation_error(estimate, q, v) == pytest.approx((0.0, 0.0, 0.0), abs=1e-7)
    assert np.allclose(estimate.generalized_velocity, v)


def test_invalid_noise_and_gains():
    with pytest.raises(ConfigError):
        SensorNoise(gyro_std=-1.0).validate()
    with pytest.raises(ConfigError):
        EstimatorConfig(velocity_gain=-1.0).validate()
