"""
Synthetic demonstration generator.

Stands in for a motion-capture session: a demonstrator skeleton (the default
humanoid scaled up to human size) steps in place or forward with its arms
swinging against the legs, and the generator returns both the link-pose clip
and the contact schedule of its own feet.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from dance_retarget.errors import ConfigError
from dance_retarget.kinematics import compute_kinematics
from dance_retarget.model import (
    ANKLE_HEIGHT,
    HIP_OFFSET,
    SHIN_LENGTH,
    THIGH_LENGTH,
    Configuration,
    build_humanoid,
    nominal_pelvis_height,
)
from dance_retarget.motion import (
    DEFAULT_HEIGHT_TOLERANCE,
    DEFAULT_VELOCITY_TOLERANCE,
    ContactSchedule,
    MotionClip,
    contact_flags,
    default_skeleton_map,
    labels_from_contacts,
)
from dance_retarget.spatial import Pose

logger = logging.getLogger(__name__)

HUMAN_SCALE = 1.0 / 0.85
# the demonstrator has relatively longer arms than the robot
HUMAN_ARM_RATIO = 1.12


@dataclass(frozen=True)
class DemoParams:
    """
    Attributes:
        stride_length: Distance travelled by a swing foot in a full stride (m);
            the first stride is half as long and the last one brings the feet together
        stride_period: Duration of one stride: swing then double support (s)
        arm_swing: Shoulder pitch amplitude of the arm counter-swing (rad)
        n_strides: Number of single-support intervals, starting with the left foot
    """

    stride_length: float = 0.3
    stride_period: float = 1.1
    arm_swing: float = 0.4
    n_strides: int = 4
    rate: float = 100.0
    lead_time: float = 0.5
    swing_fraction: float = 0.6
    step_height: float = 0.08
    sway: float = 0.03

    def validate(self) -> None:
        if not self.stride_period > 0.0:
            raise ConfigError(f"stride period must be positive, got {self.stride_period}")
        if self.n_strides < 1:
            raise ConfigError(f"n_strides must be >= 1, got {self.n_strides}")
        if self.stride_length < 0.0 or self.arm_swing < 0.0:
            raise ConfigError("stride length and arm swing must be non-negative")
        if not 0.0 < self.swing_fraction < 1.0:
            raise ConfigError("swing fraction must lie in (0, 1)")

    @property
    def duration(self) -> float:
        return 2 * self.lead_time + self.n_strides * self.stride_period


def minimum_jerk(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def bell(s: np.ndarray) -> np.ndarray:
    """Unit-height bump with zero slope at both ends."""
    s = np.clip(s, 0.0, 1.0)
    return 64.0 * s**3 * (1.0 - s) ** 3


def _leg_angles(hip: np.ndarray, ankle: np.ndarray, thigh: float, shin: float) -> np.ndarray:
    """Hip yaw/roll/pitch, knee, ankle pitch/roll that keep the foot flat."""
    d = ankle - hip
    roll = np.arctan2(d[1], -d[2])
    vertical = np.hypot(d[1], d[2])
    reach = min(np.hypot(d[0], vertical), thigh + shin - 1e-9)
    cosine = (reach**2 - thigh**2 - shin**2) / (2.0 * thigh * shin)
    knee = float(np.arccos(np.clip(cosine, -1.0, 1.0)))
    gamma = np.arctan2(-d[0], vertical)
    beta = np.arctan2(shin * np.sin(knee), thigh + shin * np.cos(knee))
    pitch = gamma - beta
    return np.array([0.0, roll, pitch, knee, -(pitch + knee), -roll])


def _foot_tracks(params: DemoParams, times: np.ndarray):
    """World x and lift of both feet plus pelvis sway, per frame."""
    x = {"left": np.zeros_like(times), "right": np.zeros_like(times)}
    lift = {"left": np.zeros_like(times), "right": np.zeros_like(times)}
    sway = np.zeros_like(times)
    if params.stride_length == 0.0:
        return x, lift, sway
    landed = {"left": 0.0, "right": 0.0}
    swing_time = params.swing_fraction * params.stride_period
    half = 0.5 * params.stride_length
    for stride in range(params.n_strides):
        swing, stance = ("left", "right") if stride % 2 == 0 else ("right", "left")
        last = stride == params.n_strides - 1 and params.n_strides > 1
        target = landed[stance] + (0.0 if last else half)
        start = params.lead_time + stride * params.stride_period
        s = (times - start) / swing_time
        active = times >= start
        x[swing][active] = landed[swing] + (target - landed[swing]) * minimum_jerk(s[active])
        lift[swing] += params.step_height * bell(s)
        landed[swing] = target
        phase = np.clip((times - start) / params.stride_period, 0.0, 1.0)
        toward = 1.0 if stance == "left" else -1.0
        sway += toward * params.sway * np.sin(np.pi * phase) ** 2
    return x, lift, sway


def generate_demo(params: DemoParams = DemoParams()) -> Tuple[MotionClip, ContactSchedule]:
    """
    Generate a stepping demonstration and its ground-truth contact schedule.

    The schedule is the geometric contact state of the generated feet under
    the default auto-annotation tolerances, so annotating the returned clip
    reproduces it.

    Raises:
        ConfigError: If the parameters are out of range
    """
    params.validate()
    human = build_humanoid("demonstrator", HUMAN_SCALE, HUMAN_ARM_RATIO)
    n_frames = int(round(params.duration * params.rate)) + 1
    times = np.arange(n_frames) / params.rate
    foot_x, foot_lift, sway = _foot_tracks(params, times)

    thigh, shin = THIGH_LENGTH * HUMAN_SCALE, SHIN_LENGTH * HUMAN_SCALE
    pelvis_height = nominal_pelvis_height(scale=HUMAN_SCALE)
    ankle_height = ANKLE_HEIGHT * HUMAN_SCALE
    half = max(0.5 * params.stride_length, 1e-12)

    skeleton = default_skeleton_map()
    names = [item.human for item in skeleton.correspondences]
    frames = [item.robot for item in skeleton.correspondences]
    positions = np.empty((n_frames, len(names), 3))
    matrices = np.empty((n_frames, len(names), 3, 3))
    joints = human.nominal.joints.copy()
    for k in range(n_frames):
        pelvis = np.array([0.5 * (foot_x["left"][k] + foot_x["right"][k]), sway[k], pelvis_height])
        for side, sign in (("left", 1.0), ("right", -1.0)):
            hip = pelvis + HIP_OFFSET * [1.0, sign, 1.0] * HUMAN_SCALE
            ankle = np.array(
                [foot_x[side][k], sign * HIP_OFFSET[1] * HUMAN_SCALE, ankle_height + foot_lift[side][k]]
            )
            start = human.joint_index[f"{side}_hip_yaw"]
            joints[start:start + 6] = _leg_angles(hip, ankle, thigh, shin)
        offset = (foot_x["left"][k] - foot_x["right"][k]) / half
        swing = params.arm_swing * float(np.clip(offset, -1.0, 1.0))
        joints[human.joint_index["left_shoulder_pitch"]] = swing
        joints[human.joint_index["right_shoulder_pitch"]] = -swing
        data = compute_kinematics(human, Configuration(Pose(translation=pelvis), joints.copy()))
        for column, frame in enumerate(frames):
            _, rotation, position = data.frame_placement(frame)
            positions[k, column] = position
            matrices[k, column] = rotation

    rotations = Rotation.from_matrix(matrices.reshape(-1, 3, 3)).as_quat().reshape(n_frames, len(names), 4)
    clip = MotionClip(params.rate, names, positions, rotations)
    left = contact_flags(
        clip.link_positions("LeftFoot"), clip.rate, DEFAULT_HEIGHT_TOLERANCE, DEFAULT_VELOCITY_TOLERANCE
    )
    right = contact_flags(
        clip.link_positions("RightFoot"), clip.rate, DEFAULT_HEIGHT_TOLERANCE, DEFAULT_VELOCITY_TOLERANCE
    )
    schedule = ContactSchedule(clip.rate, labels_from_contacts(left, right, clip.rate))
    logger.info(
        "generated demo: %d frames (%.2f s), %d strides of %.2f m",
        n_frames, clip.duration, params.n_strides, params.stride_length,
    )
    return clip, schedule
