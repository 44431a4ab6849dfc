"""
Whole-body control: one weighted QP over joint accelerations, joint torques
and contact forces per control tick.

Constraints are the floating-base equations of motion, zero acceleration of
every stance foot, the friction pyramid at the stance contacts, torque limits
and an acceleration bound that keeps joints inside their limits over a short
look-ahead. The vertical CoM acceleration is imposed through the sum of the
normal forces; when that makes the QP infeasible it becomes a weighted row.
The other tasks are weighted acceleration-level PD objectives.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from dance_retarget.centroidal import DEFAULT_FRICTION, ContactSet, gravity_compensating_forces
from dance_retarget.dynamics import GRAVITY, frame_acceleration_bias, mass_matrix_and_bias
from dance_retarget.errors import ConfigError, NumericalError
from dance_retarget.kinematics import com_and_mass, com_jacobian, compute_kinematics, frame_jacobian
from dance_retarget.model import SIDES, Configuration, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.qp import solve_dense_qp
from dance_retarget.spatial import so3_log

logger = logging.getLogger(__name__)

# cap on the commanded downward CoM acceleration, as a fraction of gravity
MAX_FALL_FRACTION = 0.9


@dataclass(frozen=True)
class WbcWeights:
    stance_leg: float = 100.0
    swing_leg: float = 10.0
    base_orientation: float = 20.0
    arm: float = 1.0
    com: float = 1e-2
    force: float = 1e-4
    regularization: float = 1e-6

    def validate(self) -> None:
        others = (self.swing_leg, self.base_orientation, self.arm, self.com, self.force)
        if min(others) < 0.0 or not self.regularization > 0.0:
            raise ConfigError("WBC weights must be non-negative and the regularization positive")
        if not self.stance_leg > max(others):
            raise ConfigError("the stance-leg task weight must be strictly the largest")


@dataclass(frozen=True)
class WbcGains:
    joint_kp: float = 100.0
    joint_kd: float = 20.0
    base_kp: float = 100.0
    base_kd: float = 20.0
    com_kp: float = 40.0
    com_kd: float = 12.0


@dataclass(frozen=True)
class WbcTaskSet:
    """Weighted tasks and constraint parameters of the controller."""

    contacts: ContactSet
    weights: WbcWeights = WbcWeights()
    gains: WbcGains = WbcGains()
    friction: float = DEFAULT_FRICTION
    limit_horizon: float = 0.05

    TASKS = ("stance_leg", "swing_leg", "base_orientation", "arm", "com", "force")
    CONSTRAINTS = ("dynamics", "no_slip", "friction_pyramid", "torque_limits", "joint_limits")

    def __post_init__(self):
        self.weights.validate()
        if self.friction < 0.0 or not self.limit_horizon > 0.0:
            raise ConfigError("WBC friction must be non-negative and the limit horizon positive")

    @classmethod
    def for_model(cls, model: RobotModel, contacts: Optional[ContactSet] = None, **kwargs) -> "WbcTaskSet":
        return cls(contacts or ContactSet.from_model(model), **kwargs)


@dataclass(frozen=True)
class WbcReferences:
    """
    Attributes:
        q, v, a: Reference configuration, velocity and acceleration
        com, com_velocity, com_acceleration: CoM reference (world)
        forces: Reference contact forces at the task set's contacts (n_c, 3)
        torso: Reference base orientation
    """

    q: Configuration
    v: np.ndarray
    a: np.ndarray
    com: np.ndarray
    com_velocity: np.ndarray
    com_acceleration: np.ndarray
    forces: np.ndarray
    label: SupportLabel
    torso: Optional[np.ndarray] = None

    @property
    def torso_rotation(self) -> np.ndarray:
        return self.q.base.rotation_matrix if self.torso is None else self.torso


@dataclass
class WbcResult:
    acceleration: np.ndarray
    torque: np.ndarray
    forces: np.ndarray  # (n_c, 3), zero at swing contacts
    status: str
    dynamics_residual: float = 0.0
    kkt_residual: float = 0.0
    task_errors: Dict[str, float] = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "solved"


class _Objective:
    def __init__(self, n: int):
        self.hessian = np.zeros((n, n))
        self.gradient = np.zeros(n)

    def add(self, rows: np.ndarray, target: np.ndarray, weight: float) -> None:
        if weight <= 0.0 or rows.size == 0:
            return
        self.hessian += weight * rows.T @ rows
        self.gradient -= weight * rows.T @ target


def leg_groups(model: RobotModel, label: SupportLabel) -> Dict[str, np.ndarray]:
    stance = [model.leg_joints[side] for side in SIDES if label.in_contact(side)]
    swing = [model.leg_joints[side] for side in SIDES if not label.in_contact(side)]
    return {
        "stance_leg": np.concatenate(stance) if stance else np.zeros(0, dtype=int),
        "swing_leg": np.concatenate(swing) if swing else np.zeros(0, dtype=int),
        "arm": np.asarray(model.arm_joints, dtype=int),
    }


def wbc_solve(
    model: RobotModel,
    q: Configuration,
    v: np.ndarray,
    references: WbcReferences,
    tasks: WbcTaskSet,
    previous_torque: Optional[np.ndarray] = None,
    gravity: np.ndarray = GRAVITY,
) -> WbcResult:
    """
    Solve the whole-body QP for the current state.

    Terms are regularised towards the reference acceleration, its force split
    and the matching inverse-dynamics torque. An infeasible QP does not raise:
    the previous torque (zero if none) is returned with status "fallback".
    """
    v = model.check_velocity(v)
    nv, n_q = model.nv, model.n_q
    data = compute_kinematics(model, q)
    inertia, bias = mass_matrix_and_bias(model, q, v, gravity, data)
    contacts = tasks.contacts
    active = np.flatnonzero(contacts.active_mask(references.label))
    n_f = 3 * len(active)
    n = nv + n_q + n_f
    points = contacts.points(data)[active]
    jacobians = data.points_jacobian(np.asarray(contacts.links)[active], points)
    contact_jacobian = jacobians.reshape(n_f, nv)

    # H qdd + b = S' tau + Jc' f
    dynamics = np.zeros((nv, n))
    dynamics[:, :nv] = inertia
    dynamics[6:, nv:nv + n_q] = -np.eye(n_q)
    dynamics[:, nv + n_q:] = -contact_jacobian.T
    equalities, targets = [dynamics], [-bias]
    for side in SIDES:
        if references.label.in_contact(side):
            frame = model.feet[side].link
            rows = np.zeros((6, n))
            rows[:, :nv] = frame_jacobian(model, q, frame, reference="world", data=data)
            equalities.append(rows)
            targets.append(-frame_acceleration_bias(model, q, v, frame, data))

    slope = tasks.friction / np.sqrt(2.0)
    facets = np.array([[1.0, 0.0, -slope], [-1.0, 0.0, -slope], [0.0, 1.0, -slope], [0.0, -1.0, -slope], [0.0, 0.0, -1.0]])
    inequality = np.zeros((5 * len(active), n))
    for i in range(len(active)):
        inequality[5 * i:5 * i + 5, nv + n_q + 3 * i:nv + n_q + 3 * i + 3] = facets

    horizon = tasks.limit_horizon
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    drift = q.joints + v[6:] * horizon
    lower[6:nv] = 2.0 * (model.lower - drift) / horizon**2
    upper[6:nv] = np.maximum(2.0 * (model.upper - drift) / horizon**2, lower[6:nv])
    lower[nv:nv + n_q] = -model.torque_limits
    upper[nv:nv + n_q] = model.torque_limits

    weights, gains = tasks.weights, tasks.gains
    objective = _Objective(n)
    joint_target = (
        references.a[6:]
        + gains.joint_kp * (references.q.joints - q.joints)
        + gains.joint_kd * (references.v[6:] - v[6:])
    )
    groups = leg_groups(model, references.label)
    for name, joints in groups.items():
        rows = np.zeros((len(joints), n))
        rows[np.arange(len(joints)), 6 + joints] = 1.0
        objective.add(rows, joint_target[joints], getattr(weights, name))

    rotation = q.base.rotation_matrix
    orientation_error = so3_log(rotation.T @ references.torso_rotation)
    base_target = references.a[3:6] + gains.base_kp * orientation_error + gains.base_kd * (references.v[3:6] - v[3:6])
    rows = np.zeros((3, n))
    rows[:, 3:6] = np.eye(3)
    objective.add(rows, base_target, weights.base_orientation)

    com, mass = com_and_mass(model, q, data)
    com_velocity = com_jacobian(model, q, data) @ v
    com_target = (
        references.com_acceleration
        + gains.com_kp * (references.com - com)
        + gains.com_kd * (references.com_velocity - com_velocity)
    )
    reference_forces = references.forces[active].reshape(-1)
    height_row = np.zeros((1, n))
    height_force = np.zeros(1)
    if n_f:
        # Newton: the contact force sum sets the CoM acceleration
        rows = np.zeros((2, n))
        rows[:, nv + n_q:] = np.tile(np.eye(3)[0:2], len(active))
        objective.add(rows, mass * (com_target[0:2] - gravity[0:2]), weights.com)
        rows = np.zeros((n_f, n))
        rows[:, nv + n_q:] = np.eye(n_f)
        objective.add(rows, reference_forces, weights.force)
        height_row[0, nv + n_q + 2::3] = 1.0
        height_force[0] = mass * (max(com_target[2], MAX_FALL_FRACTION * gravity[2]) - gravity[2])

    # regularise towards the reference's own torque and force split
    reference_torque = (inertia @ references.a + bias - contact_jacobian.T @ reference_forces)[6:]
    objective.add(np.eye(n), np.concatenate([references.a, reference_torque, reference_forces]), weights.regularization)

    def solve(hard_height: bool):
        local = objective
        eq_rows, eq_targets = list(equalities), list(targets)
        if n_f and hard_height:
            eq_rows.append(height_row)
            eq_targets.append(height_force)
        elif n_f:
            local = _Objective(n)
            local.hessian, local.gradient = objective.hessian.copy(), objective.gradient.copy()
            local.add(height_row, height_force, weights.com)
        return solve_dense_qp(
            local.hessian,
            local.gradient,
            np.vstack(eq_rows),
            np.concatenate(eq_targets),
            inequality,
            np.zeros(len(inequality)),
            lower,
            upper,
        )

    try:
        try:
            result = solve(hard_height=True)
        except NumericalError as exc:
            if not n_f:
                raise
            logger.warning("WBC vertical CoM row relaxed (%s)", exc)
            result = solve(hard_height=False)
    except NumericalError as exc:
        logger.warning("WBC QP failed (%s), holding the previous torque", exc)
        torque = np.zeros(n_q) if previous_torque is None else np.asarray(previous_torque, dtype=float).copy()
        return WbcResult(np.zeros(nv), torque, np.zeros((contacts.count, 3)), "fallback")

    z = result.x
    acceleration, torque = z[:nv], z[nv:nv + n_q]
    forces = np.zeros((contacts.count, 3))
    forces[active] = z[nv + n_q:].reshape(-1, 3)
    residual = inertia @ acceleration + bias - contact_jacobian.T @ z[nv + n_q:]
    residual[6:] -= torque
    errors = {
        name: float(np.sqrt(np.mean(np.square(acceleration[6 + joints] - joint_target[joints]))))
        for name, joints in groups.items()
        if len(joints)
    }
    errors["base_orientation"] = float(np.linalg.norm(orientation_error))
    errors["com"] = float(np.linalg.norm(forces.sum(axis=0) / mass + gravity - com_target))
    return WbcResult(
        acceleration, torque, forces, "solved",
        dynamics_residual=float(np.max(np.abs(residual))),
        kkt_residual=result.kkt_residual,
        task_errors=errors,
    )


def static_references(
    model: RobotModel, q: Configuration, contacts: ContactSet, label: SupportLabel = SupportLabel.DOUBLE
) -> WbcReferences:
    """References that hold ``q`` still, with a gravity-compensating force split."""
    data = compute_kinematics(model, q)
    com, mass = com_and_mass(model, q, data)
    forces = gravity_compensating_forces(contacts, contacts.points(data), label, com, mass)
    zeros = np.zeros(model.nv)
    return WbcReferences(q, zeros, zeros.copy(), com, np.zeros(3), np.zeros(3), forces, label, q.base.rotation_matrix)

