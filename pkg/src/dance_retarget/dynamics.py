"""
Joint-space dynamics of the floating-base tree: mass matrix, bias forces,
inverse and forward dynamics.

The equations of motion are ``H(q) a + b(q, v) = S^T tau + sum J_c^T f_c``
with the velocity convention of ``dance_retarget.kinematics``.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from dance_retarget.errors import NumericalError
from dance_retarget.kinematics import KinematicsData, compute_kinematics
from dance_retarget.model import Configuration, RobotModel

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class PointForce:
    """A world force applied at a world point attached to a link or frame."""

    frame: str
    point: np.ndarray
    force: np.ndarray


@dataclass
class _VelocityTerms:
    angular_velocity: np.ndarray  # (n_links, 3)
    angular_bias: np.ndarray  # (n_links, 3), angular acceleration with a = 0
    origin_bias: np.ndarray  # (n_links, 3), link origin acceleration with a = 0
    com_bias: np.ndarray  # (n_links, 3)


def _velocity_terms(model: RobotModel, data: KinematicsData, v: np.ndarray) -> _VelocityTerms:
    base_rotation = data.rotations[0]
    omega = np.zeros((model.n_links, 3))
    alpha = np.zeros((model.n_links, 3))
    origin_acceleration = np.zeros((model.n_links, 3))

    omega[0] = base_rotation @ v[3:6]
    origin_acceleration[0] = np.cross(omega[0], base_rotation @ v[0:3])
    for j in range(model.n_q):
        parent, child = model.joint_parents[j], j + 1
        lever = data.positions[child] - data.positions[parent]
        spin = data.axes[j] * v[6 + j]
        omega[child] = omega[parent] + spin
        alpha[child] = alpha[parent] + np.cross(omega[parent], spin)
        origin_acceleration[child] = (
            origin_acceleration[parent]
            + np.cross(alpha[parent], lever)
            + np.cross(omega[parent], np.cross(omega[parent], lever))
        )
    offsets = data.coms - data.positions
    com_bias = (
        origin_acceleration
        + np.cross(alpha, offsets)
        + np.cross(omega, np.cross(omega, offsets))
    )
    return _VelocityTerms(omega, alpha, origin_acceleration, com_bias)


def mass_matrix(model: RobotModel, q: Configuration, data: Optional[KinematicsData] = None) -> np.ndarray:
    data = data or compute_kinematics(model, q)
    linear = data.com_linear_jacobians
    angular = data.angular_jacobians
    inertia = np.einsum("l,lai,laj->ij", model.masses, linear, linear)
    inertia += np.einsum("lai,lab,lbj->ij", angular, data.world_inertias, angular)
    inertia[6:, 6:] += np.diag(model.armature)
    return 0.5 * (inertia + inertia.T)


def mass_matrix_and_bias(
    model: RobotModel,
    q: Configuration,
    v: np.ndarray,
    gravity: np.ndarray = GRAVITY,
    data: Optional[KinematicsData] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mass matrix and the generalized bias (Coriolis, centrifugal and gravity) forces.

    Args:
        model: Robot model
        q: Configuration
        v: Generalized velocity (nv,)
        gravity: World gravity vector; pass zeros to get velocity terms only
        data: Precomputed kinematics for ``q``

    Returns:
        ``(H, b)`` with H symmetric positive definite
    """
    v = model.check_velocity(v)
    data = data or compute_kinematics(model, q)
    terms = _velocity_terms(model, data, v)
    inertias = data.world_inertias
    spin = np.einsum("lij,lj->li", inertias, terms.angular_velocity)
    torques = np.einsum("lij,lj->li", inertias, terms.angular_bias) + np.cross(
        terms.angular_velocity, spin
    )
    forces = model.masses[:, None] * (terms.com_bias - np.asarray(gravity, dtype=float))
    bias = np.einsum("lai,la->i", data.com_linear_jacobians, forces)
    bias += np.einsum("lai,la->i", data.angular_jacobians, torques)
    return mass_matrix(model, q, data), bias


def frame_acceleration_bias(
    model: RobotModel,
    q: Configuration,
    v: np.ndarray,
    frame: str,
    data: Optional[KinematicsData] = None,
) -> np.ndarray:
    """World-aligned ``Jdot v`` of a frame origin, rows [linear; angular]."""
    v = model.check_velocity(v)
    data = data or compute_kinematics(model, q)
    terms = _velocity_terms(model, data, v)
    link, _, position = data.frame_placement(frame)
    offset = position - data.positions[link]
    omega, alpha = terms.angular_velocity[link], terms.angular_bias[link]
    linear = terms.origin_bias[link] + np.cross(alpha, offset) + np.cross(omega, np.cross(omega, offset))
    return np.concatenate([linear, alpha])


def contact_generalized_forces(
    model: RobotModel, q: Configuration, forces: Iterable[PointForce], data: Optional[KinematicsData] = None
) -> np.ndarray:
    """Sum of ``J^T f`` over world point forces."""
    data = data or compute_kinematics(model, q)
    total = np.zeros(model.nv)
    for item in forces:
        link, _ = model.frame(item.frame)
        jacobian = data.points_jacobian(np.array([link]), np.asarray(item.point)[None, :])[0]
        total += jacobian.T @ np.asarray(item.force, dtype=float)
    return total


def inverse_dynamics(
    model: RobotModel,
    q: Configuration,
    v: np.ndarray,
    a: np.ndarray,
    contact_forces: Iterable[PointForce] = (),
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """Generalized forces ``H a + b - sum J^T f`` (the first six entries are the base residual)."""
    data = compute_kinematics(model, q)
    inertia, bias = mass_matrix_and_bias(model, q, v, gravity, data)
    external = contact_generalized_forces(model, q, contact_forces, data)
    return inertia @ np.asarray(a, dtype=float) + bias - external


def forward_dynamics(
    model: RobotModel,
    q: Configuration,
    v: np.ndarray,
    tau: np.ndarray,
    external: Optional[np.ndarray] = None,
    gravity: np.ndarray = GRAVITY,
    data: Optional[KinematicsData] = None,
) -> np.ndarray:
    """
    Generalized acceleration for joint torques and external generalized forces.

    Raises:
        NumericalError: If the mass matrix is not positive definite
    """
    data = data or compute_kinematics(model, q)
    inertia, bias = mass_matrix_and_bias(model, q, v, gravity, data)
    rhs = -bias
    rhs[6:] += np.asarray(tau, dtype=float)
    if external is not None:
        rhs += external
    try:
        factor = cho_factor(inertia)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("mass matrix is not positive definite") from exc
    return cho_solve(factor, rhs)


def mechanical_energy(
    model: RobotModel, q: Configuration, v: np.ndarray, gravity: np.ndarray = GRAVITY
) -> Tuple[float, float]:
    """Kinetic and potential energy (J); potential is zero at z = 0."""
    data = compute_kinematics(model, q)
    v = model.check_velocity(v)
    kinetic = 0.5 * float(v @ mass_matrix(model, q, data) @ v)
    potential = -float(model.masses @ (data.coms @ np.asarray(gravity, dtype=float)))
    return kinetic, potential
