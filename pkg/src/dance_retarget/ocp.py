"""
Finite-horizon optimal control over the kinodynamic centroidal model.

Direct multiple shooting with the semi-implicit step of
``dance_retarget.centroidal``; the problem is solved by a Gauss-Newton SQP
whose sparse QP subproblems go to OSQP. The centroidal momentum matrix is
frozen inside each linearisation; every residual that decides acceptance
(dynamics defects, contact constraints, limits) is evaluated exactly.

Contact forces are scaled by the robot weight inside the QP so that all
decision variables are of order one.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import osqp
from scipy import sparse

from dance_retarget.centroidal import (
    DEFAULT_CONTACT_INSET,
    DEFAULT_FRICTION,
    CentroidalState,
    ConstraintSet,
    ContactSet,
    ControlInput,
    OcpNode,
    advance,
    build_constraints,
    gravity_compensating_forces,
    input_weights,
    stage_cost,
    state_from_motion,
    state_weights,
    step_terms,
)
from dance_retarget.dynamics import GRAVITY
from dance_retarget.errors import ConfigError, InfeasibleQpError, SingularityError
from dance_retarget.kinematics import KinematicsData, compute_kinematics, configuration_difference
from dance_retarget.model import SIDES, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import skew, so3_exp
from dance_retarget.trajectory import Trajectory

logger = logging.getLogger(__name__)

# friction pyramid facets acting on (f_x, f_y, f_z) once the slope is folded into column 2
_FACETS = np.array([[1.0, 0.0, -1.0], [-1.0, 0.0, -1.0], [0.0, 1.0, -1.0], [0.0, -1.0, -1.0]])


@dataclass(frozen=True)
class OcpWeights:
    base: float = 100.0
    momentum: float = 50.0
    leg: float = 10.0
    arm: float = 1.0
    joint_velocity: float = 0.1
    force: float = 1e-3

    def state(self, model: RobotModel) -> np.ndarray:
        return state_weights(model, self.base, self.momentum, self.leg, self.arm)

    def input(self, model: RobotModel, n_contacts: int) -> np.ndarray:
        return input_weights(model, n_contacts, self.force, self.joint_velocity)


@dataclass(frozen=True)
class OcpSettings:
    """
    Attributes:
        dt: Node spacing (s)
        friction: Friction coefficient of the contact pyramid
        contact_inset: Distance the point contacts are moved inside the sole (m)
        max_iterations: SQP iteration cap per solve
        swing_gain: Height feedback gain of the swing-foot vertical velocity (1/s)
        torque_scale: Fraction of the joint torque limits granted to the proxy
        kkt_tolerance: Bound on the infinity norm of the SQP step at convergence
        violation_tolerance: Bound on any constraint residual at convergence
    """

    dt: float = 0.02
    friction: float = DEFAULT_FRICTION
    contact_inset: float = DEFAULT_CONTACT_INSET
    max_iterations: int = 200
    swing_gain: float = 20.0
    torque_scale: float = 1.0
    kkt_tolerance: float = 1e-6
    violation_tolerance: float = 1e-5
    line_search_steps: int = 12
    armijo: float = 1e-4
    merit_weight: float = 100.0
    solver_tolerance: float = 1e-7
    solver_max_iter: int = 20000
    weights: OcpWeights = OcpWeights()

    def validate(self) -> None:
        if not self.dt > 0.0:
            raise ConfigError(f"OCP dt must be positive, got {self.dt}")
        if not self.friction > 0.0:
            raise ConfigError(f"friction coefficient must be positive, got {self.friction}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not 0.0 < self.torque_scale:
            raise ConfigError("torque_scale must be positive")
        weights = self.weights
        if min(weights.base, weights.momentum, weights.leg, weights.arm,
               weights.joint_velocity, weights.force) < 0.0:
            raise ConfigError("OCP weights must be non-negative")


@dataclass
class ReferenceTrack:
    """Centroidal references derived once from a kinematic trajectory."""

    dt: float
    states: List[CentroidalState]
    inputs: List[ControlInput]
    labels: List[SupportLabel]
    foot_heights: np.ndarray  # (n, 2), foot frame origin height per side

    @classmethod
    def from_trajectory(
        cls,
        model: RobotModel,
        trajectory: Trajectory,
        contacts: ContactSet,
        labels: Optional[Sequence[SupportLabel]] = None,
    ) -> "ReferenceTrack":
        """
        Velocities are forward differences so that each reference interval
        matches the configuration step it produces.

        Raises:
            ConfigError: If no support labels are available
        """
        labels = list(labels if labels is not None else trajectory.labels or [])
        if len(labels) != trajectory.n_nodes:
            raise ConfigError(
                f"need one support label per trajectory node ({trajectory.n_nodes}), got {len(labels)}"
            )
        configurations = trajectory.configurations()
        states, inputs, heights = [], [], []
        for k, q in enumerate(configurations):
            if k + 1 < len(configurations):
                v = configuration_difference(q, configurations[k + 1]) / trajectory.dt
            else:
                v = np.zeros(model.nv)
            state = state_from_motion(model, q, v)
            data = compute_kinematics(model, q)
            com = model.masses @ data.coms / model.total_mass
            forces = gravity_compensating_forces(contacts, contacts.points(data), labels[k], com, model.total_mass)
            states.append(state)
            inputs.append(ControlInput(forces, v[6:].copy()))
            heights.append([data.positions[model.foot_link_index(side), 2] for side in SIDES])
        return cls(trajectory.dt, states, inputs, labels, np.array(heights))

    def __len__(self) -> int:
        return len(self.states)

    def window(self, start: int, n_intervals: int):
        """References for nodes start..start+n_intervals, holding the last node past the end."""
        indices = np.minimum(np.arange(start, start + n_intervals + 1), len(self) - 1)
        states = [self.states[i] for i in indices]
        inputs = [self.inputs[i] for i in indices[:-1]]
        held = indices >= len(self) - 1
        for position in np.flatnonzero(held[:-1]):
            # holding still past the end: no commanded joint motion
            inputs[position] = ControlInput(inputs[position].forces, np.zeros_like(inputs[position].joint_velocities))
        labels = [self.labels[i] for i in indices]
        return states, inputs, labels, self.foot_heights[indices]


@dataclass
class OcpProblem:
    """
    One horizon of the OCP.

    Attributes:
        references: Reference state per node, N + 1 entries
        input_references: Reference input per interval, N entries
        labels: Support label per node
        foot_heights: Reference foot height per node and side
        state_weights: Diagonal of Q
        input_weights: Diagonal of R
        initial_state: State the first node is pinned to
    """

    model: RobotModel
    contacts: ContactSet
    dt: float
    references: List[CentroidalState]
    input_references: List[ControlInput]
    labels: List[SupportLabel]
    foot_heights: np.ndarray
    state_weights: np.ndarray
    input_weights: np.ndarray
    initial_state: CentroidalState
    settings: OcpSettings = OcpSettings()

    def __post_init__(self):
        n = len(self.references) - 1
        if n < 1:
            raise ConfigError("the horizon needs at least two nodes")
        if len(self.input_references) != n or len(self.labels) != n + 1 or len(self.foot_heights) != n + 1:
            raise ConfigError("references, inputs, labels and foot heights disagree on the node count")
        if np.any(self.state_weights < 0.0) or np.any(self.input_weights < 0.0):
            raise ConfigError("Q and R must be non-negative")
        if not self.friction > 0.0:
            raise ConfigError("friction coefficient must be positive")

    @property
    def n_intervals(self) -> int:
        return len(self.references) - 1

    @property
    def horizon(self) -> float:
        return self.n_intervals * self.dt

    @property
    def friction(self) -> float:
        return self.settings.friction

    @property
    def torque_limits(self) -> np.ndarray:
        return self.settings.torque_scale * self.model.torque_limits

    @property
    def force_scale(self) -> float:
        return self.model.total_mass * float(np.linalg.norm(GRAVITY))

    @property
    def state_dim(self) -> int:
        return 6 + self.model.nv

    @property
    def input_dim(self) -> int:
        return 3 * self.contacts.count + self.model.n_q

    def node(self, k: int) -> OcpNode:
        return OcpNode(self.model, self.contacts, self.labels[k], self.friction)

    def cost(self, states: Sequence[CentroidalState], inputs: Sequence[ControlInput]) -> float:
        total = 0.0
        zero = np.zeros(self.input_dim)
        for k in range(self.n_intervals):
            total += stage_cost(states[k], self.references[k], inputs[k], self.state_weights,
                                self.input_weights, self.input_references[k])
        total += stage_cost(states[-1], self.references[-1], zero, self.state_weights, self.input_weights)
        return total


def build_problem(
    model: RobotModel,
    contacts: ContactSet,
    track: ReferenceTrack,
    start: int,
    n_intervals: int,
    initial_state: CentroidalState,
    settings: OcpSettings = OcpSettings(),
) -> OcpProblem:
    states, inputs, labels, heights = track.window(start, n_intervals)
    return OcpProblem(
        model=model,
        contacts=contacts,
        dt=track.dt,
        references=states,
        input_references=inputs,
        labels=labels,
        foot_heights=heights,
        state_weights=settings.weights.state(model),
        input_weights=settings.weights.input(model, contacts.count),
        initial_state=initial_state,
        settings=settings,
    )


@dataclass
class OcpSolution:
    states: List[CentroidalState]
    inputs: List[ControlInput]
    cost: float
    max_defect: float
    max_violation: float
    iterations: int
    converged: bool
    kkt_residual: float
    status: str = "converged"
    history: List[Dict[str, float]] = field(default_factory=list)


def initial_guess(problem: OcpProblem) -> Tuple[List[CentroidalState], List[ControlInput]]:
    """Reference states and inputs, with the first node moved onto the initial state."""
    states = [problem.initial_state] + list(problem.references[1:])
    return states, list(problem.input_references)


def shift_guess(
    solution: OcpSolution, problem: OcpProblem, steps: int = 1
) -> Tuple[List[CentroidalState], List[ControlInput]]:
    """Warm start for the next window: drop ``steps`` nodes and repeat the tail."""
    n = problem.n_intervals
    states = list(solution.states[steps:])
    inputs = list(solution.inputs[steps:])
    while len(states) < n + 1:
        states.append(states[-1])
    while len(inputs) < n:
        inputs.append(inputs[-1])
    states = [problem.initial_state] + states[1:n + 1]
    return states, inputs[:n]


@dataclass
class _NodeTerms:
    next_state: CentroidalState
    equality: np.ndarray  # stance twists, then swing vertical-velocity rows
    torque: np.ndarray  # proxy joint torques, stacked per stance leg
    torque_joints: np.ndarray
    constraints: ConstraintSet
    velocity: np.ndarray
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    equality_dx: Optional[np.ndarray] = None
    equality_du: Optional[np.ndarray] = None
    torque_dx: Optional[np.ndarray] = None
    torque_du: Optional[np.ndarray] = None


def _foot_jacobian(data: KinematicsData, link: int) -> np.ndarray:
    jacobian = np.empty((6, data.model.nv))
    jacobian[0:3] = data.points_jacobian(np.array([link]), data.positions[link][None, :])[0]
    jacobian[3:6] = data.angular_jacobians[link]
    return jacobian


def _leg_torque(data: KinematicsData, joints: np.ndarray, points: np.ndarray, forces: np.ndarray):
    """
    Joint torques that balance the contact forces of one foot, with their
    derivatives with respect to the forces (per vertex) and the leg joint angles.
    """
    axes = data.axes[joints]
    origins = data.joint_origins[joints]
    levers = points[None, :, :] - origins[:, None, :]  # (joint, vertex, 3)
    torque = -np.einsum("jc,jc->j", axes, np.cross(levers, forces[None, :, :]).sum(axis=1))
    by_force = -np.cross(axes[:, None, :], levers)  # (joint, vertex, 3)

    # rotating joint m moves the vertices; joints above m move with it
    moved = np.cross(axes[:, None, :], points[None, :, :] - origins[:, None, :])  # (m, vertex, 3)
    below = -axes @ np.cross(moved, forces[None, :, :]).sum(axis=1).T  # [j, m]
    spun = np.cross(axes[:, None, :], forces[None, :, :])  # (m, vertex, 3)
    above = np.einsum("jc,jmic->jm", axes, np.cross(levers[:, None, :, :], spun[None, :, :, :]))
    order = np.arange(len(joints))
    by_angle = np.where(order[None, :] >= order[:, None], below, above)
    return torque, by_force, by_angle


def _node_terms(
    problem: OcpProblem, k: int, x: CentroidalState, u: ControlInput, derivatives: bool
) -> _NodeTerms:
    model, contacts, dt = problem.model, problem.contacts, problem.dt
    constraints = build_constraints(problem.node(k))
    terms = step_terms(model, x, u, dt, contacts)
    data, velocity = terms.data, terms.velocity

    rows, jacobians = [], []
    for side in constraints.stance_feet:
        jacobian = _foot_jacobian(data, model.foot_link_index(side))
        rows.append(jacobian @ velocity)
        jacobians.append(("stance", side, jacobian))
    side_column = {side: column for column, side in enumerate(SIDES)}
    for side in constraints.swing_feet:
        link = model.foot_link_index(side)
        jacobian = _foot_jacobian(data, link)
        height = problem.foot_heights[k, side_column[side]]
        ahead = problem.foot_heights[k + 1, side_column[side]]
        target = (ahead - height) / dt + problem.settings.swing_gain * (height - data.positions[link, 2])
        rows.append(np.array([jacobian[2] @ velocity - target]))
        jacobians.append(("swing", side, jacobian))

    torque_parts, joint_parts, torque_derivatives = [], [], []
    for side in constraints.torque_legs:
        joints = model.leg_joints[side]
        vertices = contacts.indices(side)
        torque, by_force, by_angle = _leg_torque(data, joints, terms.points[vertices], u.forces[vertices])
        torque_parts.append(torque)
        joint_parts.append(joints)
        torque_derivatives.append((joints, vertices, by_force, by_angle))

    result = _NodeTerms(
        next_state=advance(x, terms, dt),
        equality=np.concatenate(rows) if rows else np.zeros(0),
        torque=np.concatenate(torque_parts) if torque_parts else np.zeros(0),
        torque_joints=np.concatenate(joint_parts) if joint_parts else np.zeros(0, dtype=int),
        constraints=constraints,
        velocity=velocity,
    )
    if not derivatives:
        return result

    n_x, n_u, n_c, n_q = problem.state_dim, problem.input_dim, contacts.count, model.n_q
    scale, mass = problem.force_scale, terms.mass
    rotation = x.q.base.rotation_matrix
    to_velocity = np.eye(model.nv)
    to_velocity[0:3, 0:3] = rotation.T
    try:
        inverse_base = np.linalg.inv(terms.cmm[:, :6])
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"base block of the centroidal momentum matrix is singular at node {k}") from exc

    contact_jacobians = data.points_jacobian(np.asarray(contacts.links), terms.points)
    com_jacobian = np.einsum("l,lij->ij", model.masses, data.com_linear_jacobians) / mass
    dh_dq = -dt * np.einsum("nij,njk->ik", skew(u.forces), contact_jacobians - com_jacobian) @ to_velocity

    momentum_dx = np.zeros((6, n_x))
    momentum_dx[0:3, 0:3] = mass * np.eye(3)
    momentum_dx[3:6, 3:6] = np.eye(3)
    momentum_dx[3:6, 6:] = dh_dq
    momentum_du = np.zeros((6, n_u))
    for i in range(n_c):
        momentum_du[0:3, 3 * i:3 * i + 3] = dt * scale * np.eye(3)
        momentum_du[3:6, 3 * i:3 * i + 3] = dt * scale * skew(terms.levers[i])
    base_dx = inverse_base @ momentum_dx
    base_du = inverse_base @ momentum_du
    base_du[:, 3 * n_c:] -= inverse_base @ terms.cmm[:, 6:]
    velocity_dx = np.vstack([base_dx, np.zeros((n_q, n_x))])
    velocity_du = np.vstack([base_du, np.hstack([np.zeros((n_q, 3 * n_c)), np.eye(n_q)])])

    A = np.zeros((n_x, n_x))
    A[0:6, 0:6] = np.eye(6)
    A[3:6, 6:] = dh_dq
    A[6:9, 6:9] = np.eye(3)
    A[6:9, 9:12] = -dt * rotation @ skew(velocity[0:3])
    A[6:9] += dt * rotation @ base_dx[0:3]
    A[9:12, 9:12] = so3_exp(dt * velocity[3:6]).T
    A[9:12] += dt * base_dx[3:6]
    A[12:, 12:] = np.eye(n_q)
    B = np.zeros((n_x, n_u))
    B[0:3] = momentum_du[0:3] / mass
    B[3:6] = momentum_du[3:6]
    B[6:9] = dt * rotation @ base_du[0:3]
    B[9:12] = dt * base_du[3:6]
    B[12:, 3 * n_c:] = dt * np.eye(n_q)

    equality_dx, equality_du = [], []
    for kind, side, jacobian in jacobians:
        if kind == "stance":
            equality_dx.append(jacobian @ velocity_dx)
            equality_du.append(jacobian @ velocity_du)
        else:
            row_dx = jacobian[2] @ velocity_dx
            row_dx[6:] += problem.settings.swing_gain * jacobian[2] @ to_velocity
            equality_dx.append(row_dx[None, :])
            equality_du.append((jacobian[2] @ velocity_du)[None, :])

    torque_dx = np.zeros((len(result.torque), n_x))
    torque_du = np.zeros((len(result.torque), n_u))
    row = 0
    for joints, vertices, by_force, by_angle in torque_derivatives:
        torque_dx[row:row + len(joints), 12 + joints] = by_angle
        for position, vertex in enumerate(vertices):
            torque_du[row:row + len(joints), 3 * vertex:3 * vertex + 3] = scale * by_force[:, position]
        row += len(joints)

    result.A, result.B = A, B
    result.equality_dx = np.vstack(equality_dx) if equality_dx else np.zeros((0, n_x))
    result.equality_du = np.vstack(equality_du) if equality_du else np.zeros((0, n_u))
    result.torque_dx, result.torque_du = torque_dx, torque_du
    return result


@dataclass
class _Evaluation:
    cost: float
    terms: List[_NodeTerms]
    defects: List[np.ndarray]
    initial_error: np.ndarray
    l1: float
    max_defect: float
    max_violation: float


def _force_inequalities(problem: OcpProblem, constraints: ConstraintSet, forces: np.ndarray) -> np.ndarray:
    """Residuals that must be <= 0: pyramid facets, f_z >= 0, per-foot load cap (scaled forces)."""
    scaled = forces / problem.force_scale
    facets = _FACETS.copy()
    facets[:, 2] *= constraints.pyramid_slope
    values = [(scaled[constraints.stance_vertices] @ facets.T).ravel(), -scaled[constraints.stance_vertices, 2]]
    for side in constraints.stance_feet:
        values.append(np.array([scaled[problem.contacts.indices(side), 2].sum() - 2.0]))
    return np.concatenate(values)


def _evaluate(
    problem: OcpProblem,
    states: Sequence[CentroidalState],
    inputs: Sequence[ControlInput],
    derivatives: bool,
) -> _Evaluation:
    model = problem.model
    terms = [_node_terms(problem, k, states[k], inputs[k], derivatives) for k in range(problem.n_intervals)]
    defects = [terms[k].next_state.difference(states[k + 1]) for k in range(problem.n_intervals)]
    initial_error = problem.initial_state.difference(states[0])
    equalities = [initial_error] + defects
    inequalities = []
    for k, node in enumerate(terms):
        constraints = node.constraints
        equalities.append(node.equality)
        equalities.append(inputs[k].forces[constraints.swing_vertices].ravel() / problem.force_scale)
        inequalities.append(_force_inequalities(problem, constraints, inputs[k].forces))
        inequalities.append(np.abs(node.torque) - problem.torque_limits[node.torque_joints])
        inequalities.append(np.abs(inputs[k].joint_velocities) - model.velocity_limits)
    for state in states[1:]:
        inequalities.append(state.q.joints - model.upper)
        inequalities.append(model.lower - state.q.joints)
    equality = np.concatenate(equalities)
    inequality = np.maximum(np.concatenate(inequalities), 0.0)
    max_defect = max((float(np.max(np.abs(d))) for d in defects), default=0.0)
    return _Evaluation(
        cost=problem.cost(states, inputs),
        terms=terms,
        defects=defects,
        initial_error=initial_error,
        l1=float(np.abs(equality).sum() + inequality.sum()),
        max_defect=max_defect,
        max_violation=float(max(np.max(np.abs(equality), initial=0.0), np.max(inequality, initial=0.0))),
    )


class _Triplets:
    def __init__(self):
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, row: int, col: int, block: np.ndarray) -> None:
        block = np.atleast_2d(block)
        r, c = np.nonzero(block)
        self.rows.append(r + row)
        self.cols.append(c + col)
        self.vals.append(block[r, c])

    def matrix(self, shape: Tuple[int, int]) -> sparse.csc_matrix:
        if not self.vals:
            return sparse.csc_matrix(shape)
        return sparse.csc_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        )


@dataclass
class _Subproblem:
    P: sparse.csc_matrix
    q: np.ndarray
    A: sparse.csc_matrix
    l: np.ndarray
    u: np.ndarray


def _assemble(
    problem: OcpProblem,
    states: Sequence[CentroidalState],
    inputs: Sequence[ControlInput],
    evaluation: _Evaluation,
) -> _Subproblem:
    model, contacts = problem.model, problem.contacts
    n, n_x, n_u, n_c = problem.n_intervals, problem.state_dim, problem.input_dim, contacts.count
    scale = problem.force_scale
    n_z = (n + 1) * n_x + n * n_u

    def x_at(k: int) -> int:
        return k * n_x

    def u_at(k: int) -> int:
        return (n + 1) * n_x + k * n_u

    force_weight = np.ones(n_u)
    force_weight[:3 * n_c] = scale
    input_scaled_weights = problem.input_weights * force_weight**2
    diagonal = np.empty(n_z)
    gradient = np.empty(n_z)
    for k in range(n + 1):
        error = states[k].difference(problem.references[k])
        diagonal[x_at(k):x_at(k) + n_x] = 2.0 * problem.state_weights
        gradient[x_at(k):x_at(k) + n_x] = 2.0 * problem.state_weights * error
    for k in range(n):
        error = (inputs[k].vector - problem.input_references[k].vector) / force_weight
        diagonal[u_at(k):u_at(k) + n_u] = 2.0 * input_scaled_weights
        gradient[u_at(k):u_at(k) + n_u] = 2.0 * input_scaled_weights * error
    diagonal += 1e-9

    lower_bound = np.full(n_z, -np.inf)
    upper_bound = np.full(n_z, np.inf)
    lower_bound[0:n_x] = upper_bound[0:n_x] = evaluation.initial_error
    for k in range(1, n + 1):
        joints = slice(x_at(k) + 12, x_at(k) + n_x)
        lower_bound[joints] = model.lower - states[k].q.joints
        upper_bound[joints] = model.upper - states[k].q.joints

    triplets = _Triplets()
    low: List[np.ndarray] = []
    high: List[np.ndarray] = []
    row = 0
    for k, node in enumerate(evaluation.terms):
        triplets.add(row, x_at(k + 1), np.eye(n_x))
        triplets.add(row, x_at(k), -node.A)
        triplets.add(row, u_at(k), -node.B)
        low.append(evaluation.defects[k])
        high.append(evaluation.defects[k])
        row += n_x

        if len(node.equality):
            triplets.add(row, x_at(k), node.equality_dx)
            triplets.add(row, u_at(k), node.equality_du)
            low.append(-node.equality)
            high.append(-node.equality)
            row += len(node.equality)
        if len(node.torque):
            limit = problem.torque_limits[node.torque_joints]
            triplets.add(row, x_at(k), node.torque_dx)
            triplets.add(row, u_at(k), node.torque_du)
            low.append(-limit - node.torque)
            high.append(limit - node.torque)
            row += len(node.torque)

        constraints = node.constraints
        current = _force_inequalities(problem, constraints, inputs[k].forces)
        facets = _FACETS.copy()
        facets[:, 2] *= constraints.pyramid_slope
        position = 0
        for vertex in constraints.stance_vertices:
            triplets.add(row, u_at(k) + 3 * vertex, facets)
            high.append(-current[position:position + 4])
            low.append(np.full(4, -np.inf))
            row += 4
            position += 4
        position += len(constraints.stance_vertices)
        for side in constraints.stance_feet:
            load = np.zeros((1, n_u))
            load[0, 3 * contacts.indices(side) + 2] = 1.0
            triplets.add(row, u_at(k), load)
            high.append(np.array([-current[position]]))
            low.append(np.array([-np.inf]))
            row += 1
            position += 1

        forces = inputs[k].forces / scale
        for vertex in constraints.stance_vertices:
            lower_bound[u_at(k) + 3 * vertex + 2] = -forces[vertex, 2]
        for vertex in constraints.swing_vertices:
            block = slice(u_at(k) + 3 * vertex, u_at(k) + 3 * vertex + 3)
            lower_bound[block] = upper_bound[block] = -forces[vertex]
        joint_velocities = slice(u_at(k) + 3 * n_c, u_at(k) + n_u)
        lower_bound[joint_velocities] = -model.velocity_limits - inputs[k].joint_velocities
        upper_bound[joint_velocities] = model.velocity_limits - inputs[k].joint_velocities

    constraint = sparse.vstack([triplets.matrix((row, n_z)), sparse.identity(n_z, format="csc")], format="csc")
    return _Subproblem(
        P=sparse.diags(diagonal, format="csc"),
        q=gradient,
        A=constraint,
        l=np.concatenate(low + [lower_bound]),
        u=np.concatenate(high + [upper_bound]),
    )


def _solve_subproblem(problem: OcpProblem, subproblem: _Subproblem) -> Tuple[np.ndarray, np.ndarray]:
    solver = osqp.OSQP()
    solver.setup(
        P=subproblem.P,
        q=subproblem.q,
        A=subproblem.A,
        l=subproblem.l,
        u=subproblem.u,
        verbose=False,
        eps_abs=problem.settings.solver_tolerance,
        eps_rel=problem.settings.solver_tolerance,
        max_iter=problem.settings.solver_max_iter,
        adaptive_rho=True,
    )
    result = solver.solve()
    status = str(getattr(result.info, "status", "unknown"))
    if status not in ("solved", "solved inaccurate") or result.x is None:
        raise InfeasibleQpError(f"OCP subproblem not solved (OSQP status: {status})")
    if status != "solved":
        logger.debug("OCP subproblem solved inaccurately")
    return np.asarray(result.x, dtype=float), np.asarray(result.y, dtype=float)


def _apply_step(
    problem: OcpProblem,
    states: Sequence[CentroidalState],
    inputs: Sequence[ControlInput],
    step: np.ndarray,
    alpha: float,
) -> Tuple[List[CentroidalState], List[ControlInput]]:
    n, n_x, n_u, n_c = problem.n_intervals, problem.state_dim, problem.input_dim, problem.contacts.count
    new_states = [states[k].retract(alpha * step[k * n_x:(k + 1) * n_x]) for k in range(n + 1)]
    new_inputs = []
    offset = (n + 1) * n_x
    for k in range(n):
        delta = alpha * step[offset + k * n_u:offset + (k + 1) * n_u]
        forces = inputs[k].forces + problem.force_scale * delta[:3 * n_c].reshape(n_c, 3)
        forces[~problem.contacts.active_mask(problem.labels[k])] = 0.0
        new_inputs.append(ControlInput(forces, inputs[k].joint_velocities + delta[3 * n_c:]))
    return new_states, new_inputs


@dataclass
class SqpStep:
    states: List[CentroidalState]
    inputs: List[ControlInput]
    evaluation: _Evaluation
    step_norm: float
    alpha: float
    predicted: float
    accepted: bool
    merit_weight: float


def sqp_iteration(
    problem: OcpProblem,
    states: Sequence[CentroidalState],
    inputs: Sequence[ControlInput],
    merit_weight: Optional[float] = None,
    evaluation: Optional[_Evaluation] = None,
) -> SqpStep:
    """
    One Gauss-Newton SQP iteration with a backtracking line search on the
    l1 merit function ``cost + nu * |violations|_1``.

    Raises:
        InfeasibleQpError: If OSQP cannot solve the subproblem
    """
    settings = problem.settings
    merit_weight = settings.merit_weight if merit_weight is None else merit_weight
    evaluation = evaluation or _evaluate(problem, states, inputs, derivatives=True)
    if evaluation.terms and evaluation.terms[0].A is None:
        evaluation = _evaluate(problem, states, inputs, derivatives=True)
    subproblem = _assemble(problem, states, inputs, evaluation)
    step, multipliers = _solve_subproblem(problem, subproblem)
    merit_weight = max(merit_weight, 2.0 * float(np.max(np.abs(multipliers), initial=0.0)))

    model_cost = evaluation.cost + subproblem.q @ step + 0.5 * step @ (subproblem.P @ step)
    predicted = evaluation.cost - model_cost + merit_weight * evaluation.l1
    merit = evaluation.cost + merit_weight * evaluation.l1
    step_norm = float(np.max(np.abs(step), initial=0.0))
    if step_norm == 0.0:
        return SqpStep(list(states), list(inputs), evaluation, 0.0, 1.0, 0.0, True, merit_weight)

    alpha = 1.0
    for _ in range(settings.line_search_steps):
        trial_states, trial_inputs = _apply_step(problem, states, inputs, step, alpha)
        trial = _evaluate(problem, trial_states, trial_inputs, derivatives=False)
        trial_merit = trial.cost + merit_weight * trial.l1
        if trial_merit <= merit - settings.armijo * alpha * max(predicted, 0.0):
            return SqpStep(trial_states, trial_inputs, trial, step_norm, alpha, predicted, True, merit_weight)
        alpha *= 0.5
    return SqpStep(list(states), list(inputs), evaluation, step_norm, 0.0, predicted, False, merit_weight)


def solve_ocp(
    problem: OcpProblem,
    guess: Optional[Tuple[Sequence[CentroidalState], Sequence[ControlInput]]] = None,
    max_iterations: Optional[int] = None,
) -> OcpSolution:
    """
    Solve one horizon by Gauss-Newton SQP.

    Args:
        problem: The OCP
        guess: Initial state and input trajectories (defaults to the references)
        max_iterations: Overrides ``problem.settings.max_iterations``

    Returns:
        The last accepted iterate. ``converged`` is False when the iteration cap
        is hit or the line search fails; the status says which.

    Raises:
        InfeasibleQpError: If the first subproblem cannot be solved
    """
    settings = problem.settings
    cap = settings.max_iterations if max_iterations is None else max_iterations
    states, inputs = guess if guess is not None else initial_guess(problem)
    states, inputs = list(states), list(inputs)
    evaluation = _evaluate(problem, states, inputs, derivatives=True)
    merit_weight = settings.merit_weight
    history: List[Dict[str, float]] = []
    status, converged, kkt = "iteration cap reached", False, np.inf

    for iteration in range(1, cap + 1):
        try:
            result = sqp_iteration(problem, states, inputs, merit_weight, evaluation)
        except InfeasibleQpError as exc:
            if iteration == 1:
                raise
            logger.warning("OCP subproblem failed at iteration %d: %s", iteration, exc)
            status = "subproblem failed"
            break
        merit_weight = result.merit_weight
        kkt = max(result.step_norm, evaluation.max_defect)
        feasible = evaluation.max_violation <= settings.violation_tolerance
        stalled = result.predicted <= 1e-10 * (1.0 + evaluation.cost)
        if feasible and (kkt <= settings.kkt_tolerance or stalled):
            converged, status = True, "converged"
            history.append(_history_row(iteration, evaluation, kkt, merit_weight, 0.0))
            break
        if not result.accepted:
            status = "line search failed"
            history.append(_history_row(iteration, evaluation, kkt, merit_weight, 0.0))
            break
        states, inputs = result.states, result.inputs
        evaluation = _evaluate(problem, states, inputs, derivatives=True)
        history.append(_history_row(iteration, evaluation, kkt, merit_weight, result.alpha))
    else:
        iteration = cap

    if not converged:
        logger.warning(
            "OCP not converged after %d iterations (%s): violation %.3g, kkt %.3g",
            iteration, status, evaluation.max_violation, kkt,
        )
    return OcpSolution(
        states=states,
        inputs=inputs,
        cost=evaluation.cost,
        max_defect=evaluation.max_defect,
        max_violation=evaluation.max_violation,
        iterations=iteration,
        converged=converged,
        kkt_residual=float(kkt),
        status=status,
        history=history,
    )


def _history_row(iteration: int, evaluation: _Evaluation, kkt: float, merit_weight: float, alpha: float) -> Dict[str, float]:
    return {
        "iteration": iteration,
        "cost": evaluation.cost,
        "merit": evaluation.cost + merit_weight * evaluation.l1,
        "kkt": kkt,
        "max_defect": evaluation.max_defect,
        "max_violation": evaluation.max_violation,
        "alpha": alpha,
    }
