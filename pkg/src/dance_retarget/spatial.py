"""
Rigid-transform algebra: poses, twists and the SO(3)/SE(3) exponential maps.

Conventions used across the package:
    - quaternions are stored scalar-last ``[x, y, z, w]`` (scipy convention);
    - 6-vectors are ordered ``[linear; angular]``;
    - ``Pose`` maps points from its own frame into the parent frame,
      ``p_parent = R @ p_local + t``.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from dance_retarget.errors import SingularityError

_SMALL_ANGLE = 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector, or a stack of them with shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for a unit axis."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * k
        + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)
    )


def so3_log(rotation: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(rotation).as_rotvec()


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    return (
        np.eye(3)
        + ((1.0 - np.cos(theta)) / theta**2) * k
        + ((theta - np.sin(theta)) / theta**3) * (k @ k)
    )


def _left_jacobian_inverse(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        coefficient = 1.0 / 12.0 + theta**2 / 720.0
    else:
        half = 0.5 * theta
        coefficient = (1.0 - half * np.cos(half) / np.sin(half)) / theta**2
    return np.eye(3) - 0.5 * k + coefficient * (k @ k)


@dataclass(frozen=True)
class Twist:
    """Element of se(3): angular (rad/s or rad) and linear (m/s or m) parts."""

    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Twist":
        vector = np.asarray(vector, dtype=float)
        return cls(angular=vector[3:6].copy(), linear=vector[0:3].copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class Pose:
    """Element of SE(3) stored as a unit quaternion and a translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(4)
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        norm = float(np.linalg.norm(rotation))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion must be unit-norm, got norm {norm}")
        if not np.all(np.isfinite(translation)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", rotation / norm)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rotation_matrix(cls, matrix: np.ndarray, translation=None) -> "Pose":
        quaternion = Rotation.from_matrix(matrix).as_quat()
        return cls(quaternion, np.zeros(3) if translation is None else translation)

    @classmethod
    def from_matrix(cls, homogeneous: np.ndarray) -> "Pose":
        homogeneous = np.asarray(homogeneous, dtype=float)
        return cls.from_rotation_matrix(homogeneous[:3, :3], homogeneous[:3, 3])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation_matrix
        out[:3, 3] = self.translation
        return out

    def compose(self, other: "Pose") -> "Pose":
        rotation = Rotation.from_quat(self.rotation) * Rotation.from_quat(other.rotation)
        return Pose(
            rotation.as_quat(),
            self.translation + self.rotation_matrix @ other.translation,
        )

    def __mul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        inverse_rotation = Rotation.from_quat(self.rotation).inv()
        return Pose(
            inverse_rotation.as_quat(),
            -(inverse_rotation.as_matrix() @ self.translation),
        )

    def act(self, point: np.ndarray) -> np.ndarray:
        return self.rotation_matrix @ np.asarray(point, dtype=float) + self.translation

    def is_close(self, other: "Pose", tolerance: float = 1e-9) -> bool:
        same_rotation = np.allclose(
            self.rotation_matrix, other.rotation_matrix, atol=tolerance, rtol=0.0
        )
        same_translation = np.allclose(
            self.translation, other.translation, atol=tolerance, rtol=0.0
        )
        return bool(same_rotation and same_translation)


def se3_exp(twist: Twist) -> Pose:
    rotation = so3_exp(twist.angular)
    translation = _left_jacobian(twist.angular) @ twist.linear
    return Pose.from_rotation_matrix(rotation, translation)


def se3_log(relative: Pose, singularity_margin: float = 1e-6) -> Twist:
    """Logarithm of SE(3); raises near rotations of angle pi where it is ill-defined."""
    omega = so3_log(relative.rotation_matrix)
    if float(np.linalg.norm(omega)) > np.pi - singularity_margin:
        raise SingularityError("log singularity: rotation angle too close to pi")
    linear = _left_jacobian_inverse(omega) @ relative.translation
    return Twist(angular=omega, linear=linear)


def slerp(q0: np.ndarray, q1: np.ndarray, fraction: float) -> np.ndarray:
    if fraction <= 0.0:
        return np.asarray(q0, dtype=float).copy()
    if fraction >= 1.0:
        return np.asarray(q1, dtype=float).copy()
    interpolator = Slerp([0.0, 1.0], Rotation.from_quat([q0, q1]))
    return interpolator([fraction]).as_quat()[0]


def interpolate_pose(a: Pose, b: Pose, fraction: float) -> Pose:
    return Pose(
        slerp(a.rotation, b.rotation, fraction),
        (1.0 - fraction) * a.translation + fraction * b.translation,
    )


def quaternion_to_rpy(quaternion: np.ndarray) -> np.ndarray:
    """Roll, pitch, yaw (extrinsic xyz) of a quaternion."""
    return Rotation.from_quat(quaternion).as_euler("xyz")
