"""
Kinodynamic centroidal model: centroidal momentum dynamics coupled with
whole-body kinematics.

The state is ``x = [rdot, h, q]`` (CoM velocity, angular momentum about the
CoM, configuration) and the input ``u = [f_1..f_n, v_j]`` (world forces at the
point contacts, joint velocities). The base velocity is not a decision
variable; it is recovered from the momentum through the base block of the
centroidal momentum matrix.

Tangent increments of a state are ordered ``[d rdot, d h, d p, d theta, d q_j]``
with the base position increment in world coordinates and the orientation
increment in the base frame.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dance_retarget.dynamics import GRAVITY
from dance_retarget.errors import SingularityError
from dance_retarget.kinematics import (
    KinematicsData,
    centroidal_momentum_matrix,
    com_and_mass,
    compute_kinematics,
    integrate_configuration,
)
from dance_retarget.model import SIDES, Configuration, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import Pose, so3_exp, so3_log

logger = logging.getLogger(__name__)

DEFAULT_FRICTION = 0.7
DEFAULT_CONTACT_INSET = 0.015


@dataclass(frozen=True)
class CentroidalState:
    com_velocity: np.ndarray
    angular_momentum: np.ndarray
    q: Configuration

    @property
    def dimension(self) -> int:
        return 12 + self.q.joints.size

    def retract(self, delta: np.ndarray) -> "CentroidalState":
        delta = np.asarray(delta, dtype=float)
        rotation = self.q.base.rotation_matrix @ so3_exp(delta[9:12])
        base = Pose.from_rotation_matrix(rotation, self.q.base.translation + delta[6:9])
        return CentroidalState(
            self.com_velocity + delta[0:3],
            self.angular_momentum + delta[3:6],
            Configuration(base, self.q.joints + delta[12:]),
        )

    def difference(self, other: "CentroidalState") -> np.ndarray:
        """Tangent vector d with ``other.retract(d) == self``."""
        return np.concatenate(
            [
                self.com_velocity - other.com_velocity,
                self.angular_momentum - other.angular_momentum,
                self.q.base.translation - other.q.base.translation,
                so3_log(other.q.base.rotation_matrix.T @ self.q.base.rotation_matrix),
                self.q.joints - other.q.joints,
            ]
        )


@dataclass(frozen=True)
class ControlInput:
    forces: np.ndarray  # (n_contacts, 3), world frame
    joint_velocities: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.forces.reshape(-1), self.joint_velocities])

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_contacts: int) -> "ControlInput":
        vector = np.asarray(vector, dtype=float)
        return cls(vector[: 3 * n_contacts].reshape(n_contacts, 3).copy(), vector[3 * n_contacts:].copy())

    @classmethod
    def zeros(cls, n_contacts: int, n_q: int) -> "ControlInput":
        return cls(np.zeros((n_contacts, 3)), np.zeros(n_q))


@dataclass(frozen=True)
class CentroidalRate:
    com_acceleration: np.ndarray
    angular_momentum_rate: np.ndarray
    velocity: np.ndarray  # generalized velocity of the configuration


@dataclass(frozen=True)
class ContactSet:
    """
    Point contacts used by the optimiser: the sole vertices of both feet,
    moved ``inset`` metres towards each sole's centre.
    """

    sides: Tuple[str, ...]
    links: Tuple[int, ...]
    vertices: np.ndarray  # (n, 3) in the foot frame

    @classmethod
    def from_model(cls, model: RobotModel, inset: float = DEFAULT_CONTACT_INSET) -> "ContactSet":
        sides, links, vertices = [], [], []
        for side in SIDES:
            sole = model.feet[side].vertices
            centre = sole.mean(axis=0)
            shrunk = sole.copy()
            shrunk[:, 0:2] -= inset * np.sign(sole[:, 0:2] - centre[0:2])
            sides += [side] * len(sole)
            links += [model.foot_link_index(side)] * len(sole)
            vertices.append(shrunk)
        return cls(tuple(sides), tuple(links), np.vstack(vertices))

    @property
    def count(self) -> int:
        return len(self.sides)

    def indices(self, side: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.sides) if s == side], dtype=int)

    def active_mask(self, label: SupportLabel) -> np.ndarray:
        return np.array([label.in_contact(side) for side in self.sides])

    def points(self, data: KinematicsData) -> np.ndarray:
        links = np.asarray(self.links)
        return data.positions[links] + np.einsum("nij,nj->ni", data.rotations[links], self.vertices)


@dataclass(frozen=True)
class OcpNode:
    model: RobotModel
    contacts: ContactSet
    label: SupportLabel
    friction: float = DEFAULT_FRICTION


@dataclass
class ConstraintSet:
    """
    Constraints attached to one OCP node.

    Stance vertices must have zero world velocity; the optimiser imposes this
    as a zero 6D twist of each stance foot, which is equivalent for three or
    more non-collinear vertices. Swing vertices have their forces pinned to zero.
    """

    label: SupportLabel
    stance_feet: List[str]
    swing_feet: List[str]
    stance_vertices: List[int]
    swing_vertices: List[int]
    friction: float
    joint_lower: np.ndarray
    joint_upper: np.ndarray
    velocity_limits: np.ndarray
    torque_limits: np.ndarray
    torque_legs: List[str] = field(default_factory=list)

    @property
    def pyramid_slope(self) -> float:
        return self.friction / np.sqrt(2.0)

    def pyramid_violation(self, force: np.ndarray) -> float:
        """Largest violation of ``|f_x|, |f_y| <= mu f_z / sqrt 2`` and ``f_z >= 0`` (0 if satisfied)."""
        fx, fy, fz = np.asarray(force, dtype=float)
        slope = self.pyramid_slope
        return float(max(0.0, abs(fx) - slope * fz, abs(fy) - slope * fz, -fz))

    def friction_satisfied(self, force: np.ndarray, slack: float = 0.0) -> bool:
        return self.pyramid_violation(force) <= slack


def build_constraints(node: OcpNode) -> ConstraintSet:
    model, contacts, label = node.model, node.contacts, node.label
    stance = [side for side in SIDES if label.in_contact(side)]
    swing = [side for side in SIDES if side not in stance]
    return ConstraintSet(
        label=label,
        stance_feet=stance,
        swing_feet=swing,
        stance_vertices=[i for i, side in enumerate(contacts.sides) if side in stance],
        swing_vertices=[i for i, side in enumerate(contacts.sides) if side in swing],
        friction=node.friction,
        joint_lower=model.lower,
        joint_upper=model.upper,
        velocity_limits=model.velocity_limits,
        torque_limits=model.torque_limits,
        torque_legs=stance,
    )


def base_velocity_from_momentum(
    model: RobotModel,
    q: Configuration,
    momentum: np.ndarray,
    joint_velocities: np.ndarray,
    cmm: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Base twist (local frame) that produces the given centroidal momentum.

    Args:
        model: Robot model
        q: Configuration
        momentum: ``[M rdot; h]``
        joint_velocities: Joint velocities (rad/s)
        cmm: Centroidal momentum matrix at ``q`` if already computed

    Raises:
        SingularityError: If the base block of the momentum matrix is singular
    """
    cmm = centroidal_momentum_matrix(model, q) if cmm is None else cmm
    base_block = cmm[:, :6]
    rhs = np.asarray(momentum, dtype=float) - cmm[:, 6:] @ np.asarray(joint_velocities, dtype=float)
    try:
        return np.linalg.solve(base_block, rhs)
    except np.linalg.LinAlgError as exc:
        condition = np.linalg.cond(base_block)
        raise SingularityError(
            f"base block of the centroidal momentum matrix is singular (cond={condition:.3g})"
        ) from exc


def momentum_of(state: CentroidalState, mass: float) -> np.ndarray:
    return np.concatenate([mass * state.com_velocity, state.angular_momentum])


def dynamics_flow(
    model: RobotModel,
    x: CentroidalState,
    u: ControlInput,
    active: Sequence[bool],
    contact_points: np.ndarray,
    gravity: np.ndarray = GRAVITY,
) -> CentroidalRate:
    """
    Continuous-time centroidal dynamics with point contacts.

    Forces at inactive contacts are ignored.
    """
    forces = u.forces * np.asarray(active, dtype=float)[:, None]
    data = compute_kinematics(model, x.q)
    com, mass = com_and_mass(model, x.q, data)
    levers = np.asarray(contact_points, dtype=float) - com
    cmm = centroidal_momentum_matrix(model, x.q, data)
    base = base_velocity_from_momentum(model, x.q, momentum_of(x, mass), u.joint_velocities, cmm)
    return CentroidalRate(
        com_acceleration=gravity + forces.sum(axis=0) / mass,
        angular_momentum_rate=np.cross(levers, forces).sum(axis=0),
        velocity=np.concatenate([base, u.joint_velocities]),
    )


@dataclass
class StepTerms:
    """Quantities of one semi-implicit step evaluated at the start state."""

    data: KinematicsData
    com: np.ndarray
    mass: float
    cmm: np.ndarray
    points: np.ndarray
    com_velocity: np.ndarray  # after the step
    angular_momentum: np.ndarray  # after the step
    velocity: np.ndarray  # generalized velocity applied over the step

    @property
    def levers(self) -> np.ndarray:
        return self.points - self.com


def step_terms(
    model: RobotModel,
    x: CentroidalState,
    u: ControlInput,
    dt: float,
    contacts: ContactSet,
    gravity: np.ndarray = GRAVITY,
    data: Optional[KinematicsData] = None,
) -> StepTerms:
    data = data or compute_kinematics(model, x.q)
    com, mass = com_and_mass(model, x.q, data)
    cmm = centroidal_momentum_matrix(model, x.q, data)
    points = contacts.points(data)
    com_velocity = x.com_velocity + dt * (gravity + u.forces.sum(axis=0) / mass)
    angular_momentum = x.angular_momentum + dt * np.cross(points - com, u.forces).sum(axis=0)
    base = base_velocity_from_momentum(
        model, x.q, np.concatenate([mass * com_velocity, angular_momentum]), u.joint_velocities, cmm
    )
    velocity = np.concatenate([base, u.joint_velocities])
    return StepTerms(data, com, mass, cmm, points, com_velocity, angular_momentum, velocity)


def discrete_dynamics(
    model: RobotModel,
    x: CentroidalState,
    u: ControlInput,
    dt: float,
    contacts: ContactSet,
    gravity: np.ndarray = GRAVITY,
    data: Optional[KinematicsData] = None,
) -> CentroidalState:
    """
    One semi-implicit Euler step: momentum first, then the configuration is
    advanced with the base velocity reconstructed from the new momentum.
    """
    terms = step_terms(model, x, u, dt, contacts, gravity, data)
    return advance(x, terms, dt)


def advance(x: CentroidalState, terms: StepTerms, dt: float) -> CentroidalState:
    q = integrate_configuration(x.q, terms.velocity, dt)
    return CentroidalState(terms.com_velocity, terms.angular_momentum, q)


def state_from_motion(model: RobotModel, q: Configuration, v: np.ndarray) -> CentroidalState:
    """Centroidal state of a configuration moving with generalized velocity v."""
    momentum = centroidal_momentum_matrix(model, q) @ np.asarray(v, dtype=float)
    return CentroidalState(momentum[0:3] / model.total_mass, momentum[3:6], q)


def state_weights(
    model: RobotModel,
    base: float = 100.0,
    momentum: float = 50.0,
    leg: float = 10.0,
    arm: float = 1.0,
) -> np.ndarray:
    """Diagonal of Q over the state tangent coordinates."""
    joints = np.full(model.n_q, arm)
    for side in SIDES:
        joints[model.leg_joints[side]] = leg
    return np.concatenate([np.full(6, momentum), np.full(6, base), joints])


def input_weights(model: RobotModel, n_contacts: int, force: float = 1e-3, velocity: float = 0.1) -> np.ndarray:
    """Diagonal of R over the input coordinates."""
    return np.concatenate([np.full(3 * n_contacts, force), np.full(model.n_q, velocity)])


def stage_cost(
    x: CentroidalState,
    x_ref: CentroidalState,
    u: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    u_ref: Optional[np.ndarray] = None,
) -> float:
    """
    ``|x - x_ref|^2_Q + |u - u_ref|^2_R`` with the orientation error taken in the tangent space.

    Q and R are the diagonals of the weight matrices; ``u`` may be a
    ControlInput or its vector.
    """
    error = x.difference(x_ref)
    u = u.vector if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    if u_ref is not None:
        u = u - (u_ref.vector if isinstance(u_ref, ControlInput) else np.asarray(u_ref, dtype=float))
    return float(error @ (np.asarray(Q) * error) + u @ (np.asarray(R) * u))


def gravity_compensating_forces(
    contacts: ContactSet,
    points: np.ndarray,
    label: SupportLabel,
    com: np.ndarray,
    mass: float,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """
    Vertical contact forces carrying the weight with their centre of pressure under the CoM.

    The least-norm deviation from an even split is used; when the CoM
    projection falls outside the stance vertices the forces are clipped at zero
    and renormalised.
    """
    forces = np.zeros((contacts.count, 3))
    active = np.flatnonzero(contacts.active_mask(label))
    weight = mass * float(np.linalg.norm(gravity))
    even = np.full(len(active), weight / len(active))
    balance = np.vstack([np.ones(len(active)), points[active, 0], points[active, 1]])
    target = np.array([weight, com[0] * weight, com[1] * weight])
    correction, *_ = np.linalg.lstsq(balance, target - balance @ even, rcond=None)
    vertical = np.maximum(even + correction, 0.0)
    vertical *= weight / vertical.sum()
    forces[active, 2] = vertical
    return forces
