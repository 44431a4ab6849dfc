"""
Online MPC: one warm-started SQP iteration of the centroidal OCP per control
cycle, anchored at the estimated state, and extraction of the whole-body
references the WBC tracks.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from dance_retarget.centroidal import CentroidalState, ContactSet
from dance_retarget.errors import NumericalError
from dance_retarget.kinematics import com_and_mass, compute_kinematics, configuration_difference
from dance_retarget.model import SIDES, Configuration, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.ocp import OcpSettings, OcpSolution, ReferenceTrack, build_problem, initial_guess, shift_guess, sqp_iteration
from dance_retarget.spatial import interpolate_pose
from dance_retarget.wbc import WbcReferences

logger = logging.getLogger(__name__)


@dataclass
class MpcPlan:
    """
    Whole-body references over one horizon, one entry per OCP node.

    ``velocities[k]`` is the generalized velocity over interval k and
    ``accelerations[k]`` its forward difference.
    """

    start_time: float
    dt: float
    configurations: List[Configuration]
    velocities: np.ndarray
    accelerations: np.ndarray
    coms: np.ndarray
    com_velocities: np.ndarray
    com_accelerations: np.ndarray
    feet: np.ndarray  # (n, 2, 3) foot origins, SIDES order
    forces: np.ndarray  # (n, n_c, 3)
    labels: List[SupportLabel]
    solution: OcpSolution
    node: int = 0
    status: str = "ok"
    solve_ms: float = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.configurations)

    @property
    def end_time(self) -> float:
        return self.start_time + (self.n_nodes - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(self.n_nodes)


@dataclass
class MpcStepResult:
    plan: MpcPlan
    events: List[str] = field(default_factory=list)


def extract_plan(model: RobotModel, solution: OcpSolution, dt: float) -> Tuple:
    """Configurations, finite-difference velocities and accelerations, CoM, feet and forces per node."""
    configurations = [state.q for state in solution.states]
    n = len(configurations)
    velocities = np.zeros((n, model.nv))
    for k in range(n - 1):
        velocities[k] = configuration_difference(configurations[k], configurations[k + 1]) / dt
    velocities[-1] = velocities[-2] if n > 1 else 0.0
    accelerations = np.zeros_like(velocities)
    accelerations[:-1] = np.diff(velocities, axis=0) / dt
    coms, feet = np.zeros((n, 3)), np.zeros((n, len(SIDES), 3))
    for k, q in enumerate(configurations):
        data = compute_kinematics(model, q)
        coms[k], _ = com_and_mass(model, q, data)
        feet[k] = [data.positions[model.foot_link_index(side)] for side in SIDES]
    com_velocities = np.array([state.com_velocity for state in solution.states])
    com_accelerations = np.zeros_like(com_velocities)
    com_accelerations[:-1] = np.diff(com_velocities, axis=0) / dt
    forces = np.array([u.forces for u in solution.inputs] + [solution.inputs[-1].forces])
    return configurations, velocities, accelerations, coms, com_velocities, com_accelerations, feet, forces


def mpc_step(
    model: RobotModel,
    contacts: ContactSet,
    track: ReferenceTrack,
    time_now: float,
    estimate: CentroidalState,
    n_intervals: int,
    settings: OcpSettings = OcpSettings(),
    previous: Optional[MpcPlan] = None,
) -> MpcStepResult:
    """
    One MPC update.

    The OCP window starts at the reference node nearest to ``time_now`` and
    at the estimated state, warm-started from the previous plan shifted to that
    node. Exactly one SQP iteration is taken. If the subproblem fails the
    previous plan is kept and an event is returned instead of raising.
    """
    node = int(np.clip(round(time_now / track.dt), 0, len(track) - 1))
    problem = build_problem(model, contacts, track, node, n_intervals, estimate, settings)
    if previous is not None and previous.solution.states and len(previous.solution.inputs) == n_intervals:
        guess = shift_guess(previous.solution, problem, max(node - previous.node, 0))
    else:
        guess = initial_guess(problem)
    started = time.perf_counter()
    try:
        step = sqp_iteration(problem, *guess)
    except NumericalError as exc:
        elapsed = 1e3 * (time.perf_counter() - started)
        message = f"mpc subproblem failed at t={time_now:.3f}s: {exc}"
        logger.warning(message)
        if previous is None:
            raise
        return MpcStepResult(_replace_timing(previous, "reused", elapsed), [message])
    elapsed = 1e3 * (time.perf_counter() - started)
    solution = OcpSolution(
        states=step.states,
        inputs=step.inputs,
        cost=step.evaluation.cost,
        max_defect=step.evaluation.max_defect,
        max_violation=step.evaluation.max_violation,
        iterations=1,
        converged=step.accepted and step.step_norm <= settings.kkt_tolerance,
        kkt_residual=step.step_norm,
        status="accepted" if step.accepted else "line search failed",
    )
    configurations, velocities, accelerations, coms, com_velocities, com_accelerations, feet, forces = extract_plan(
        model, solution, track.dt
    )
    plan = MpcPlan(
        start_time=node * track.dt,
        dt=track.dt,
        configurations=configurations,
        velocities=velocities,
        accelerations=accelerations,
        coms=coms,
        com_velocities=com_velocities,
        com_accelerations=com_accelerations,
        feet=feet,
        forces=forces,
        labels=list(problem.labels),
        solution=solution,
        node=node,
        status=solution.status,
        solve_ms=elapsed,
    )
    logger.debug("mpc at node %d: step %.3g, alpha %.3g, %.2f ms", node, step.step_norm, step.alpha, elapsed)
    return MpcStepResult(plan)


def _replace_timing(plan: MpcPlan, status: str, solve_ms: float) -> MpcPlan:
    return replace(plan, status=status, solve_ms=solve_ms)


def plan_difference(a: MpcPlan, b: MpcPlan) -> float:
    """Largest joint-position difference over the nodes both plans cover."""
    offset = int(round((b.start_time - a.start_time) / a.dt))
    if offset < 0:
        return plan_difference(b, a)
    overlap = min(a.n_nodes - offset, b.n_nodes)
    if overlap <= 0:
        return 0.0
    return float(
        max(np.max(np.abs(a.configurations[offset + k].joints - b.configurations[k].joints)) for k in range(overlap))
    )


@dataclass(frozen=True)
class InterpolatedReference:
    references: WbcReferences
    feet: np.ndarray
    in_span: bool


def interpolate_reference(plan: MpcPlan, t: float) -> InterpolatedReference:
    """
    References at time t: linear in time for vectors, slerp for the base
    orientation, exact at the nodes. Outside the plan span the nearest end
    node is held and ``in_span`` is False.
    """
    position = (t - plan.start_time) / plan.dt
    in_span = -1e-9 <= position <= plan.n_nodes - 1 + 1e-9
    if not in_span:
        logger.info("reference requested at t=%.3f s outside the plan span [%.3f, %.3f]", t, plan.start_time, plan.end_time)
    position = float(np.clip(position, 0.0, plan.n_nodes - 1))
    k = min(int(np.floor(position)), plan.n_nodes - 1)
    s = position - k
    if k == plan.n_nodes - 1 or s == 0.0:
        return InterpolatedReference(_node_reference(plan, k), plan.feet[k].copy(), in_span)
    a, b = plan.configurations[k], plan.configurations[k + 1]

    def lerp(values):
        return (1.0 - s) * values[k] + s * values[k + 1]

    q = Configuration(interpolate_pose(a.base, b.base, s), (1.0 - s) * a.joints + s * b.joints)
    references = WbcReferences(
        q=q,
        v=lerp(plan.velocities),
        a=lerp(plan.accelerations),
        com=lerp(plan.coms),
        com_velocity=lerp(plan.com_velocities),
        com_acceleration=lerp(plan.com_accelerations),
        forces=lerp(plan.forces),
        label=plan.labels[k],
        torso=q.base.rotation_matrix,
    )
    return InterpolatedReference(references, lerp(plan.feet), in_span)


def _node_reference(plan: MpcPlan, k: int) -> WbcReferences:
    return WbcReferences(
        q=plan.configurations[k].copy(),
        v=plan.velocities[k].copy(),
        a=plan.accelerations[k].copy(),
        com=plan.coms[k].copy(),
        com_velocity=plan.com_velocities[k].copy(),
        com_acceleration=plan.com_accelerations[k].copy(),
        forces=plan.forces[k].copy(),
        label=plan.labels[k],
        torso=plan.configurations[k].base.rotation_matrix,
    )

