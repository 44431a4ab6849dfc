"""
Forward kinematics, Jacobians, centre of mass and the centroidal momentum matrix.

Generalized velocities are ``v = [v_base_local, w_base_local, qdot]``: the base
twist is expressed in the base frame, so world base velocities are ``R v``.
Jacobian columns follow the same ordering.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np

from dance_retarget.errors import ModelError
from dance_retarget.model import Configuration, RobotModel
from dance_retarget.spatial import Pose, axis_angle_matrix, skew, so3_exp, so3_log

logger = logging.getLogger(__name__)


@dataclass
class KinematicsData:
    """
    World placement of every link for one configuration.

    Jacobians are computed lazily and cached on first access.
    """

    model: RobotModel
    q: Configuration
    rotations: np.ndarray  # (n_links, 3, 3)
    positions: np.ndarray  # (n_links, 3), link frame origins
    coms: np.ndarray  # (n_links, 3), world link CoMs
    axes: np.ndarray  # (n_q, 3), world joint axes

    @property
    def joint_origins(self) -> np.ndarray:
        return self.positions[1:]

    @cached_property
    def world_inertias(self) -> np.ndarray:
        return self.rotations @ self.model.link_inertias @ np.transpose(self.rotations, (0, 2, 1))

    def base_columns(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Linear-velocity base columns for world points, shape (n, 3, 6)."""
        base_rotation = self.rotations[0]
        offsets = points - self.positions[0]
        linear = np.zeros((len(points), 3, 6))
        linear[:, :, 0:3] = base_rotation
        linear[:, :, 3:6] = -skew(offsets) @ base_rotation
        angular = np.zeros((len(points), 3, 6))
        angular[:, :, 3:6] = base_rotation
        return linear, angular

    def points_jacobian(self, links: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Linear Jacobians (n, 3, nv) of world points rigidly attached to ``links``."""
        links = np.asarray(links, dtype=int)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        linear, _ = self.base_columns(points)
        lever = points[:, None, :] - self.joint_origins[None, :, :]
        columns = np.cross(self.axes[None, :, :], lever)
        columns *= self.model.support[links][:, :, None]
        return np.concatenate([linear, np.transpose(columns, (0, 2, 1))], axis=2)

    @cached_property
    def com_linear_jacobians(self) -> np.ndarray:
        return self.points_jacobian(np.arange(self.model.n_links), self.coms)

    @cached_property
    def angular_jacobians(self) -> np.ndarray:
        n_links = self.model.n_links
        _, base = self.base_columns(np.zeros((n_links, 3)))
        joints = self.axes.T[None, :, :] * self.model.support[:, None, :]
        return np.concatenate([base, joints], axis=2)

    def frame_placement(self, frame: str) -> Tuple[int, np.ndarray, np.ndarray]:
        link, offset = self.model.frame(frame)
        rotation = self.rotations[link] @ offset.rotation_matrix
        position = self.positions[link] + self.rotations[link] @ offset.translation
        return link, rotation, position


def compute_kinematics(model: RobotModel, q: Configuration) -> KinematicsData:
    """Propagate joint transforms from the base to every link."""
    model.check_configuration(q)
    rotations = np.empty((model.n_links, 3, 3))
    positions = np.empty((model.n_links, 3))
    rotations[0] = q.base.rotation_matrix
    positions[0] = q.base.translation
    for j in range(model.n_q):
        parent = model.joint_parents[j]
        joint_frame = rotations[parent] @ model.origin_rotations[j]
        rotations[j + 1] = joint_frame @ axis_angle_matrix(model.joint_axes[j], q.joints[j])
        positions[j + 1] = positions[parent] + rotations[parent] @ model.origin_translations[j]
    coms = positions + np.einsum("lij,lj->li", rotations, model.link_coms)
    axes = np.einsum("jab,jb->ja", rotations[1:], model.joint_axes)
    return KinematicsData(model, q, rotations, positions, coms, axes)


def forward_kinematics(model: RobotModel, q: Configuration) -> Dict[str, Pose]:
    """World pose of every link and operational frame."""
    data = compute_kinematics(model, q)
    poses = {}
    for name in model.frames:
        _, rotation, position = data.frame_placement(name)
        poses[name] = Pose.from_rotation_matrix(rotation, position)
    poses[model.links[0].name] = q.base
    return poses


def frame_pose(model: RobotModel, q: Configuration, frame: str, data: Optional[KinematicsData] = None) -> Pose:
    data = data or compute_kinematics(model, q)
    _, rotation, position = data.frame_placement(frame)
    return Pose.from_rotation_matrix(rotation, position)


def frame_jacobian(
    model: RobotModel,
    q: Configuration,
    frame: str,
    reference: str = "local",
    data: Optional[KinematicsData] = None,
) -> np.ndarray:
    """
    6 x nv Jacobian of a frame, rows ordered [linear; angular].

    Args:
        model: Robot model
        q: Configuration
        frame: Link or operational frame name
        reference: "local" maps to the frame's body twist, which matches the
            first-order change of ``log6(T(q)^-1 T(q + dq))``; "world" gives
            the world-aligned velocity of the frame origin
        data: Precomputed kinematics for ``q``

    Raises:
        UnknownFrameError: If the frame does not exist
    """
    data = data or compute_kinematics(model, q)
    link, rotation, position = data.frame_placement(frame)
    jacobian = np.empty((6, model.nv))
    jacobian[0:3] = data.points_jacobian(np.array([link]), position[None, :])[0]
    jacobian[3:6] = data.angular_jacobians[link]
    if reference == "world":
        return jacobian
    if reference != "local":
        raise ValueError(f"reference must be 'local' or 'world', got '{reference}'")
    jacobian[0:3] = rotation.T @ jacobian[0:3]
    jacobian[3:6] = rotation.T @ jacobian[3:6]
    return jacobian


def point_jacobian(
    model: RobotModel, q: Configuration, link: str, point: np.ndarray, data: Optional[KinematicsData] = None
) -> np.ndarray:
    """World linear Jacobian (3 x nv) of a point given in the link frame."""
    data = data or compute_kinematics(model, q)
    index, _ = model.frame(link)
    world = data.positions[index] + data.rotations[index] @ np.asarray(point, dtype=float)
    return data.points_jacobian(np.array([index]), world[None, :])[0]


def com_and_mass(model: RobotModel, q: Configuration, data: Optional[KinematicsData] = None) -> Tuple[np.ndarray, float]:
    if model.total_mass <= 0.0:
        raise ModelError(f"model '{model.name}' has zero total mass")
    data = data or compute_kinematics(model, q)
    com = model.masses @ data.coms / model.total_mass
    return com, model.total_mass


def com_jacobian(model: RobotModel, q: Configuration, data: Optional[KinematicsData] = None) -> np.ndarray:
    data = data or compute_kinematics(model, q)
    return np.einsum("l,lij->ij", model.masses, data.com_linear_jacobians) / model.total_mass


def centroidal_momentum_matrix(
    model: RobotModel, q: Configuration, data: Optional[KinematicsData] = None
) -> np.ndarray:
    """
    Matrix A(q) with ``A v = [M rdot; h]``, angular momentum taken about the CoM.

    Rows are [linear; angular], world-aligned.
    """
    data = data or compute_kinematics(model, q)
    com, _ = com_and_mass(model, q, data)
    masses = model.masses[:, None, None]
    linear = masses * data.com_linear_jacobians
    angular = data.world_inertias @ data.angular_jacobians
    angular += skew(data.coms - com) @ linear
    return np.concatenate([linear.sum(axis=0), angular.sum(axis=0)], axis=0)


def centroidal_momentum_matrix_dot(
    model: RobotModel, q: Configuration, v: np.ndarray, epsilon: float = 1e-6
) -> np.ndarray:
    """Time derivative of A(q) along v by central differences."""
    v = model.check_velocity(v)
    ahead = centroidal_momentum_matrix(model, integrate_configuration(q, v, epsilon))
    behind = centroidal_momentum_matrix(model, integrate_configuration(q, -v, epsilon))
    return (ahead - behind) / (2.0 * epsilon)


def integrate_configuration(q: Configuration, v: np.ndarray, dt: float) -> Configuration:
    """
    Advance a configuration by a constant generalized velocity.

    The base moves by ``dt R v_lin`` and rotates by ``exp(dt w)`` applied in
    the base frame; joints are updated additively.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = np.asarray(v, dtype=float).reshape(-1)
    rotation = q.base.rotation_matrix
    translation = q.base.translation + dt * rotation @ v[0:3]
    rotation = rotation @ so3_exp(dt * v[3:6])
    return Configuration(
        Pose.from_rotation_matrix(rotation, translation), q.joints + dt * v[6:]
    )


def configuration_difference(q0: Configuration, q1: Configuration) -> np.ndarray:
    """Tangent vector d with ``integrate_configuration(q0, d, 1) == q1``."""
    rotation = q0.base.rotation_matrix
    return np.concatenate(
        [
            rotation.T @ (q1.base.translation - q0.base.translation),
            so3_log(rotation.T @ q1.base.rotation_matrix),
            q1.joints - q0.joints,
        ]
    )
