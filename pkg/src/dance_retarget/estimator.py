"""
Base state estimation from IMU and joint encoders.

Orientation is integrated from the gyroscope and pulled towards the gravity
direction seen by the accelerometer (complementary filter). Heading is pulled
towards the stance-foot heading latched at touchdown. Base velocity and
position integrate the accelerometer and are corrected by the stance-foot
zero-velocity measurement from leg kinematics.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from dance_retarget.dynamics import GRAVITY
from dance_retarget.errors import ConfigError
from dance_retarget.kinematics import compute_kinematics
from dance_retarget.model import SIDES, Configuration, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import Pose, so3_exp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorNoise:
    gyro_std: float = 0.005
    accel_std: float = 0.05
    encoder_std: float = 1e-4
    encoder_velocity_std: float = 1e-3
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    encoder_bias: float = 0.0

    def validate(self) -> None:
        if min(self.gyro_std, self.accel_std, self.encoder_std, self.encoder_velocity_std) < 0.0:
            raise ConfigError("sensor noise standard deviations must be non-negative")

    @classmethod
    def noiseless(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SensorReadings:
    """
    Attributes:
        gyro: Base angular velocity in the base frame (rad/s)
        accelerometer: Specific force in the base frame (m/s^2), +9.81 up at rest
    """

    time: float
    gyro: np.ndarray
    accelerometer: np.ndarray
    joint_positions: np.ndarray
    joint_velocities: np.ndarray


def read_sensors(
    q: Configuration,
    v: np.ndarray,
    acceleration: np.ndarray,
    time: float,
    noise: SensorNoise,
    rng: np.random.Generator,
    gravity: np.ndarray = GRAVITY,
) -> SensorReadings:
    """Sample noisy IMU and encoder readings of a simulated state."""
    rotation = q.base.rotation_matrix
    omega, linear = v[3:6], v[0:3]
    specific = acceleration[0:3] + np.cross(omega, linear) - rotation.T @ gravity
    n_q = q.joints.size
    return SensorReadings(
        time=time,
        gyro=omega + noise.gyro_bias + rng.normal(0.0, noise.gyro_std, 3),
        accelerometer=specific + noise.accel_bias + rng.normal(0.0, noise.accel_std, 3),
        joint_positions=q.joints + noise.encoder_bias + rng.normal(0.0, noise.encoder_std, n_q),
        joint_velocities=v[6:] + rng.normal(0.0, noise.encoder_velocity_std, n_q),
    )


@dataclass(frozen=True)
class EstimatorConfig:
    """
    Gains are rates (1/s); the per-update blend is ``1 - exp(-gain * dt)``.

    Attributes:
        kinematic_correction: Use stance-leg kinematics for base velocity and position
        yaw_latch: Correct heading towards the stance-foot heading latched at touchdown
        accel_gate: Skip the tilt correction when |a| differs from g by more than this fraction
    """

    tilt_gain: float = 4.0
    yaw_gain: float = 4.0
    velocity_gain: float = 20.0
    position_gain: float = 5.0
    kinematic_correction: bool = True
    yaw_latch: bool = True
    accel_gate: float = 0.2

    def validate(self) -> None:
        if min(self.tilt_gain, self.yaw_gain, self.velocity_gain, self.position_gain) < 0.0:
            raise ConfigError("estimator gains must be non-negative")


@dataclass(frozen=True)
class FootLatch:
    position: np.ndarray
    yaw: float


@dataclass(frozen=True)
class EstimatedState:
    time: float
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray  # world frame
    angular_velocity: np.ndarray  # base frame
    joints: np.ndarray
    joint_velocities: np.ndarray
    latches: Dict[str, FootLatch] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        # re-orthonormalise so the orientation stays a unit quaternion
        u, _, vt = np.linalg.svd(self.rotation)
        object.__setattr__(self, "rotation", u @ vt)

    @classmethod
    def from_truth(cls, q: Configuration, v: np.ndarray, time: float = 0.0) -> "EstimatedState":
        rotation = q.base.rotation_matrix
        return cls(
            time, rotation, q.base.translation.copy(), rotation @ v[0:3], v[3:6].copy(),
            q.joints.copy(), v[6:].copy(),
        )

    @property
    def configuration(self) -> Configuration:
        return Configuration(Pose.from_rotation_matrix(self.rotation, self.position), self.joints.copy())

    @property
    def generalized_velocity(self) -> np.ndarray:
        return np.concatenate([self.rotation.T @ self.velocity, self.angular_velocity, self.joint_velocities])


def heading(rotation: np.ndarray) -> float:
    return float(np.arctan2(rotation[1, 0], rotation[0, 0]))


def wrap_angle(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def _blend(gain: float, dt: float) -> float:
    return 1.0 - float(np.exp(-gain * dt))


def _contact_flags(contact) -> Dict[str, bool]:
    if isinstance(contact, SupportLabel):
        return {side: contact.in_contact(side) for side in SIDES}
    return {side: bool(contact.get(side, False)) for side in SIDES}


def estimate_state(
    model: RobotModel,
    previous: EstimatedState,
    sensors: SensorReadings,
    contact,
    dt: float,
    config: EstimatorConfig = EstimatorConfig(),
    gravity: np.ndarray = GRAVITY,
) -> EstimatedState:
    """
    One filter update.

    Args:
        model: Robot model
        previous: Estimate at the previous update
        sensors: Current readings
        contact: Support label or a side -> in-contact mapping
        dt: Time since the previous update
        config: Filter gains and switches

    Raises:
        ValueError: If dt is not positive
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    flags = _contact_flags(contact)
    rotation, position, velocity = previous.rotation, previous.position, previous.velocity
    joints, joint_velocities = sensors.joint_positions, sensors.joint_velocities
    omega, specific = sensors.gyro, sensors.accelerometer
    g = float(np.linalg.norm(gravity))

    correction = np.zeros(3)
    magnitude = float(np.linalg.norm(specific))
    if magnitude > 0.0 and abs(magnitude - g) <= config.accel_gate * g:
        measured_up = specific / magnitude
        estimated_up = rotation.T @ (-gravity / g)
        correction += config.tilt_gain * np.cross(measured_up, estimated_up)

    data = compute_kinematics(model, Configuration(Pose.from_rotation_matrix(rotation, position), joints))
    latches: Dict[str, FootLatch] = {}
    for side in SIDES:
        if not flags[side]:
            continue
        link = model.foot_link_index(side)
        latches[side] = previous.latches.get(side) or FootLatch(
            data.positions[link].copy(), heading(data.rotations[link])
        )
    if config.yaw_latch and latches:
        error = np.mean(
            [wrap_angle(latch.yaw - heading(data.rotations[model.foot_link_index(side)])) for side, latch in latches.items()]
        )
        correction += config.yaw_gain * error * (rotation.T @ np.array([0.0, 0.0, 1.0]))

    velocity = velocity + dt * (rotation @ specific + gravity)
    position = position + dt * velocity
    innovation = 0.0
    if config.kinematic_correction and latches:
        rates = np.concatenate([omega, joint_velocities])
        measured_velocity, measured_position = [], []
        for side, latch in latches.items():
            link = model.foot_link_index(side)
            jacobian = data.points_jacobian(np.array([link]), data.positions[link][None, :])[0]
            measured_velocity.append(-jacobian[:, 3:] @ rates)
            measured_position.append(latch.position - (data.positions[link] - data.positions[0]))
        measured_velocity = np.mean(measured_velocity, axis=0)
        innovation = float(np.linalg.norm(measured_velocity - velocity))
        velocity = velocity + _blend(config.velocity_gain, dt) * (measured_velocity - velocity)
        position = position + _blend(config.position_gain, dt) * (np.mean(measured_position, axis=0) - position)

    rotation = rotation @ so3_exp(dt * (omega + correction))
    return EstimatedState(
        time=sensors.time,
        rotation=rotation,
        position=position,
        velocity=velocity,
        angular_velocity=omega.copy(),
        joints=joints.copy(),
        joint_velocities=joint_velocities.copy(),
        latches=latches,
        diagnostics={"velocity_innovation": innovation, "tilt_correction": float(np.linalg.norm(correction))},
    )


def estimation_error(estimate: EstimatedState, q: Configuration, v: np.ndarray) -> Tuple[float, float, float]:
    """Orientation (rad), position (m) and velocity (m/s) errors against the true state."""
    true_rotation = q.base.rotation_matrix
    relative = true_rotation.T @ estimate.rotation
    angle = float(np.arccos(np.clip(0.5 * (np.trace(relative) - 1.0), -1.0, 1.0)))
    position = float(np.linalg.norm(estimate.position - q.base.translation))
    velocity = float(np.linalg.norm(estimate.velocity - true_rotation @ v[0:3]))
    return angle, position, velocity

