"""
Dynamic retargeting: refine a kinematic trajectory into a dynamically
feasible one by solving the OCP in a receding horizon and applying only the
first input(s) of every window.
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from dance_retarget.centroidal import (
    CentroidalState,
    ContactSet,
    ControlInput,
    base_velocity_from_momentum,
    discrete_dynamics,
    momentum_of,
)
from dance_retarget.dynamics import GRAVITY
from dance_retarget.errors import ConfigError, NumericalError
from dance_retarget.kinematics import (
    centroidal_momentum_matrix,
    com_and_mass,
    compute_kinematics,
    integrate_configuration,
)
from dance_retarget.model import RobotModel
from dance_retarget.motion import ContactSchedule, SupportLabel
from dance_retarget.ocp import OcpSettings, OcpSolution, ReferenceTrack, build_problem, shift_guess, solve_ocp
from dance_retarget.spatial import so3_log
from dance_retarget.trajectory import DYNAMIC, Trajectory

logger = logging.getLogger(__name__)


@dataclass
class DynamicRetargetResult:
    trajectory: Trajectory
    log: pd.DataFrame  # one row per solved window


def subsample_trajectory(trajectory: Trajectory, dt: float) -> Trajectory:
    """
    Keep every r-th node so that the spacing becomes ``dt``.

    Raises:
        ConfigError: If ``dt`` is not an integer multiple of the trajectory spacing
    """
    ratio = int(round(dt / trajectory.dt))
    if ratio < 1 or abs(ratio * trajectory.dt - dt) > 1e-9:
        raise ConfigError(f"OCP dt {dt} is not a multiple of the trajectory dt {trajectory.dt}")
    if ratio == 1:
        return trajectory
    keep = np.arange(0, trajectory.n_nodes, ratio)
    return Trajectory(
        dt=dt,
        joint_names=list(trajectory.joint_names),
        base_translations=trajectory.base_translations[keep],
        base_rotations=trajectory.base_rotations[keep],
        joints=trajectory.joints[keep],
        velocities=trajectory.velocities[keep],
        kind=trajectory.kind,
        labels=[trajectory.labels[i] for i in keep] if trajectory.labels is not None else None,
    )


def project_input(
    model: RobotModel, contacts: ContactSet, label: SupportLabel, u: ControlInput, friction: float
) -> ControlInput:
    """Zero swing forces and clip the rest into the friction pyramid and the velocity limits."""
    forces = u.forces.copy()
    forces[~contacts.active_mask(label)] = 0.0
    forces[:, 2] = np.maximum(forces[:, 2], 0.0)
    bound = friction / np.sqrt(2.0) * forces[:, 2:3]
    forces[:, 0:2] = np.clip(forces[:, 0:2], -bound, bound)
    velocities = np.clip(u.joint_velocities, -model.velocity_limits, model.velocity_limits)
    return ControlInput(forces, velocities)


def interval_velocity(
    model: RobotModel, x: CentroidalState, u: ControlInput, dt: float, contacts: ContactSet
) -> CentroidalState:
    """State after the momentum update of one step, still at the start configuration."""
    after = discrete_dynamics(model, x, u, dt, contacts)
    return CentroidalState(after.com_velocity, after.angular_momentum, x.q)


def retarget_dynamic(
    model: RobotModel,
    trajectory: Trajectory,
    schedule: Optional[ContactSchedule] = None,
    horizon: float = 1.2,
    window_stride: int = 1,
    settings: OcpSettings = OcpSettings(),
    max_iterations: Optional[int] = None,
) -> DynamicRetargetResult:
    """
    Receding-horizon refinement of a kinematic trajectory.

    Each window starts at the current optimised state and is warm-started
    from the previous window shifted by ``window_stride`` nodes. The first
    ``window_stride`` inputs are projected onto the contact constraints and
    applied through the exact discrete dynamics, so consecutive output nodes
    have no dynamics defect.

    The output stores, per node, the generalized velocity applied over the
    following interval together with the momentum it carries.

    Raises:
        ConfigError: If the horizon is shorter than two nodes or labels are missing
        NumericalError: If a window cannot be solved; the message names its first node
    """
    settings.validate()
    trajectory.check_model(model)
    n_intervals = int(round(horizon / settings.dt))
    if n_intervals < 2:
        raise ConfigError(f"horizon {horizon} s is shorter than two nodes of {settings.dt} s")
    if window_stride < 1:
        raise ConfigError("window stride must be at least 1")
    if schedule is not None:
        if len(schedule) != trajectory.n_nodes:
            raise ConfigError(f"schedule has {len(schedule)} frames, trajectory has {trajectory.n_nodes} nodes")
        trajectory = replace(trajectory, labels=list(schedule.labels))
    coarse = subsample_trajectory(trajectory, settings.dt)
    contacts = ContactSet.from_model(model, settings.contact_inset)
    track = ReferenceTrack.from_trajectory(model, coarse, contacts)
    n_nodes = len(track)

    x = track.states[0]
    states: List[CentroidalState] = [x]
    inputs: List[ControlInput] = []
    rows = []
    previous: Optional[OcpSolution] = None
    node = 0
    started = time.perf_counter()
    while node < n_nodes - 1:
        problem = build_problem(model, contacts, track, node, n_intervals, x, settings)
        guess = shift_guess(previous, problem, window_stride) if previous is not None else None
        tic = time.perf_counter()
        try:
            solution = solve_ocp(problem, guess, max_iterations)
        except NumericalError as exc:
            raise NumericalError(f"window starting at node {node} failed: {exc}") from exc
        rows.append(
            {
                "window": len(rows),
                "node": node,
                "time": node * settings.dt,
                "iterations": solution.iterations,
                "converged": solution.converged,
                "status": solution.status,
                "kkt": solution.kkt_residual,
                "cost": solution.cost,
                "merit": solution.history[-1]["merit"] if solution.history else solution.cost,
                "max_defect": solution.max_defect,
                "max_violation": solution.max_violation,
                "solve_ms": 1e3 * (time.perf_counter() - tic),
            }
        )
        for j in range(min(window_stride, n_nodes - 1 - node)):
            u = project_input(model, contacts, track.labels[node], solution.inputs[j], settings.friction)
            x = discrete_dynamics(model, x, u, settings.dt, contacts)
            inputs.append(u)
            states.append(x)
            node += 1
        previous = solution
        logger.debug("window at node %d: %d iterations, %s", rows[-1]["node"], solution.iterations, solution.status)

    last = solution.inputs[min(window_stride, n_intervals - 1)] if n_nodes > 1 else track.inputs[0]
    inputs.append(project_input(model, contacts, track.labels[-1], last, settings.friction))
    log = pd.DataFrame(rows)
    logger.info(
        "dynamic retargeting: %d nodes, %d windows, %d not converged, %.1f s",
        n_nodes, len(rows), int((~log["converged"]).sum()) if len(log) else 0, time.perf_counter() - started,
    )
    return DynamicRetargetResult(_assemble_output(model, coarse, contacts, track, states, inputs, settings.dt), log)


def _assemble_output(
    model: RobotModel,
    coarse: Trajectory,
    contacts: ContactSet,
    track: ReferenceTrack,
    states: List[CentroidalState],
    inputs: List[ControlInput],
    dt: float,
) -> Trajectory:
    velocities, com_velocity, angular_momentum, points = [], [], [], []
    for x, u in zip(states, inputs):
        carried = interval_velocity(model, x, u, dt, contacts)
        cmm = centroidal_momentum_matrix(model, x.q)
        base = base_velocity_from_momentum(model, x.q, momentum_of(carried, model.total_mass), u.joint_velocities, cmm)
        velocities.append(np.concatenate([base, u.joint_velocities]))
        com_velocity.append(carried.com_velocity)
        angular_momentum.append(carried.angular_momentum)
        points.append(contacts.points(compute_kinematics(model, x.q)))
    trajectory = Trajectory.from_configurations(
        dt,
        list(coarse.joint_names),
        [x.q for x in states],
        np.array(velocities),
        kind=DYNAMIC,
        labels=list(track.labels),
        forces=np.array([u.forces for u in inputs]),
        contact_points=np.array(points),
        com_velocity=np.array(com_velocity),
        angular_momentum=np.array(angular_momentum),
        diagnostics={"contact_sides": list(contacts.sides)},
    )
    return replace(trajectory, residuals=dynamics_residuals(model, trajectory, contacts))


def dynamics_residuals(
    model: RobotModel, trajectory: Trajectory, contacts: ContactSet, gravity: np.ndarray = GRAVITY
) -> Dict[str, np.ndarray]:
    """
    Per-node consistency checks of a dynamic trajectory, computed from its
    stored arrays only.

    ``defect``: Newton-Euler balance of consecutive stored momenta against the
    stored forces and contact points, and the configuration step implied by
    the stored velocity. ``momentum``: stored momentum against the centroidal
    momentum matrix times the stored velocity. ``slip``: largest speed of a
    stance vertex under the stored velocity.
    """
    if trajectory.forces is None or trajectory.com_velocity is None or trajectory.angular_momentum is None:
        raise ValueError("dynamics residuals need a trajectory with forces and momenta")
    dt, mass = trajectory.dt, model.total_mass
    n = trajectory.n_nodes
    configurations = trajectory.configurations()
    defect, momentum, slip = np.zeros(n), np.zeros(n), np.zeros(n)
    for k, q in enumerate(configurations):
        data = compute_kinematics(model, q)
        com, _ = com_and_mass(model, q, data)
        v = trajectory.velocities[k]
        forces = trajectory.forces[k]
        stored = np.concatenate([mass * trajectory.com_velocity[k], trajectory.angular_momentum[k]])
        momentum[k] = float(np.max(np.abs(centroidal_momentum_matrix(model, q, data) @ v - stored)))
        if trajectory.labels is not None:
            active = contacts.active_mask(trajectory.labels[k])
            if active.any():
                links = np.asarray(contacts.links)[active]
                jacobians = data.points_jacobian(links, contacts.points(data)[active])
                slip[k] = float(np.max(np.linalg.norm(jacobians @ v, axis=1)))
        errors = []
        if k > 0:
            linear = trajectory.com_velocity[k] - trajectory.com_velocity[k - 1] - dt * (gravity + forces.sum(axis=0) / mass)
            levers = trajectory.contact_points[k] - com
            angular = trajectory.angular_momentum[k] - trajectory.angular_momentum[k - 1] - dt * np.cross(levers, forces).sum(axis=0)
            errors += [linear, angular]
        if k + 1 < n:
            stepped = integrate_configuration(q, v, dt)
            following = configurations[k + 1]
            errors += [
                following.base.translation - stepped.base.translation,
                so3_log(stepped.base.rotation_matrix.T @ following.base.rotation_matrix),
                following.joints - stepped.joints,
            ]
        defect[k] = float(np.max(np.abs(np.concatenate(errors)))) if errors else 0.0
    return {"defect": defect, "momentum": momentum, "slip": slip}
