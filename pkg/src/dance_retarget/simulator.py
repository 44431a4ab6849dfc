"""
Rigid-body simulation of the full model on flat ground with penalty contact.

Every sole vertex is a contact point. The normal force is a spring-damper on
penetration, the tangential force a spring-damper anchored where the vertex
touched down, capped at ``friction * f_z`` (the anchor slides while slipping).
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from dance_retarget.dynamics import (
    GRAVITY,
    PointForce,
    contact_generalized_forces,
    forward_dynamics,
    mechanical_energy,
)
from dance_retarget.errors import ConfigError, SimulationDivergedError
from dance_retarget.kinematics import KinematicsData, compute_kinematics, integrate_configuration
from dance_retarget.model import SIDES, Configuration, RobotModel

logger = logging.getLogger(__name__)

MAX_PHYSICS_STEP = 1e-3
DIVERGENCE_SPEED = 1e3
CARPET_SOFTENING = 5.0


@dataclass(frozen=True)
class SimWorld:
    """
    Attributes:
        stiffness: Ground normal stiffness per vertex (N/m)
        damping: Ground normal damping per vertex (N s/m)
        friction: Coulomb coefficient of the simulated floor
        carpet: Soft floor; divides the normal stiffness by five
        physics_step: Integration step (s)
    """

    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    stiffness: float = 1e5
    damping: float = 2e3
    friction: float = 0.8
    carpet: bool = False
    physics_step: float = 1e-3
    tangential_stiffness: float = 5e4
    tangential_damping: float = 5e2

    @property
    def normal_stiffness(self) -> float:
        return self.stiffness / CARPET_SOFTENING if self.carpet else self.stiffness

    def validate(self) -> None:
        if not (self.stiffness > 0.0 and self.damping > 0.0):
            raise ConfigError("ground stiffness and damping must be positive")
        if not (self.tangential_stiffness > 0.0 and self.tangential_damping >= 0.0):
            raise ConfigError("tangential stiffness must be positive and damping non-negative")
        if self.friction < 0.0:
            raise ConfigError(f"friction must be non-negative, got {self.friction}")
        if not 0.0 < self.physics_step <= MAX_PHYSICS_STEP:
            raise ConfigError(f"physics step must be in (0, {MAX_PHYSICS_STEP}] s, got {self.physics_step}")


@dataclass(frozen=True)
class SimState:
    q: Configuration
    v: np.ndarray
    time: float = 0.0
    anchors: Optional[np.ndarray] = None  # (n_vertices, 2), NaN when the vertex is airborne


@dataclass(frozen=True)
class ContactReport:
    sides: Tuple[str, ...]
    points: np.ndarray  # (n, 3) world vertex positions
    forces: np.ndarray  # (n, 3) world forces on the robot
    penetration: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.penetration > 0.0

    def foot_force(self, side: str) -> np.ndarray:
        mask = np.array([s == side for s in self.sides])
        return self.forces[mask].sum(axis=0)

    def in_contact(self, side: str) -> bool:
        mask = np.array([s == side for s in self.sides])
        return bool(np.any(self.active[mask]))


@dataclass(frozen=True)
class SimStepResult:
    state: SimState
    contacts: ContactReport
    acceleration: np.ndarray  # generalized acceleration applied over the step


def sole_links_and_vertices(model: RobotModel) -> Tuple[Tuple[str, ...], np.ndarray, np.ndarray]:
    sides, links, vertices = [], [], []
    for side in SIDES:
        sole = model.feet[side].vertices
        sides += [side] * len(sole)
        links += [model.foot_link_index(side)] * len(sole)
        vertices.append(sole)
    return tuple(sides), np.array(links), np.vstack(vertices)


def initial_state(model: RobotModel, q: Configuration, v: Optional[np.ndarray] = None) -> SimState:
    _, links, _ = sole_links_and_vertices(model)
    velocity = np.zeros(model.nv) if v is None else model.check_velocity(v).copy()
    return SimState(q, velocity, 0.0, np.full((len(links), 2), np.nan))


def ground_contact(
    world: SimWorld, model: RobotModel, state: SimState, data: KinematicsData
) -> Tuple[ContactReport, np.ndarray, np.ndarray]:
    """
    Penalty forces at every sole vertex.

    Returns:
        The contact report, the updated tangential anchors and the vertex Jacobians
    """
    sides, links, vertices = sole_links_and_vertices(model)
    points = data.positions[links] + np.einsum("nij,nj->ni", data.rotations[links], vertices)
    jacobians = data.points_jacobian(links, points)
    velocities = jacobians @ state.v
    anchors = state.anchors if state.anchors is not None else np.full((len(links), 2), np.nan)
    anchors = anchors.copy()

    penetration = np.maximum(-points[:, 2], 0.0)
    forces = np.zeros_like(points)
    touching = penetration > 0.0
    forces[:, 2] = np.where(
        touching,
        np.maximum(world.normal_stiffness * penetration - world.damping * velocities[:, 2], 0.0),
        0.0,
    )
    for i in np.flatnonzero(touching):
        if np.isnan(anchors[i, 0]):
            anchors[i] = points[i, 0:2]
        tangential = (
            -world.tangential_stiffness * (points[i, 0:2] - anchors[i])
            - world.tangential_damping * velocities[i, 0:2]
        )
        cap = world.friction * forces[i, 2]
        magnitude = np.linalg.norm(tangential)
        if magnitude > cap:
            tangential *= cap / magnitude
            # slipping: drag the anchor so the spring alone carries the capped force
            anchors[i] = points[i, 0:2] + tangential / world.tangential_stiffness
        forces[i, 0:2] = tangential
    anchors[~touching] = np.nan
    return ContactReport(sides, points, forces, penetration), anchors, jacobians


def sim_step(
    world: SimWorld,
    model: RobotModel,
    state: SimState,
    tau: np.ndarray,
    dt: Optional[float] = None,
    pushes: Iterable[PointForce] = (),
) -> SimStepResult:
    """
    Advance the simulation by one semi-implicit Euler step.

    Args:
        world: Ground and gravity parameters
        model: Robot model
        state: Current state
        tau: Joint torques, held over the step
        dt: Step length; defaults to ``world.physics_step``
        pushes: External point forces applied during the step

    Raises:
        ConfigError: If the step is longer than 1 ms
        SimulationDivergedError: If the velocity is not finite or exceeds 1e3
    """
    dt = world.physics_step if dt is None else dt
    if not 0.0 < dt <= MAX_PHYSICS_STEP:
        raise ConfigError(f"physics step must be in (0, {MAX_PHYSICS_STEP}] s, got {dt}")
    data = compute_kinematics(model, state.q)
    contacts, anchors, jacobians = ground_contact(world, model, state, data)
    external = np.einsum("nai,na->i", jacobians, contacts.forces)
    external += contact_generalized_forces(model, state.q, pushes, data)
    acceleration = forward_dynamics(model, state.q, state.v, tau, external, world.gravity, data)
    v = state.v + dt * acceleration
    speed = float(np.linalg.norm(v))
    if not np.isfinite(speed) or speed > DIVERGENCE_SPEED:
        raise SimulationDivergedError(state.time + dt)
    q = integrate_configuration(state.q, v, dt)
    result = SimStepResult(SimState(q, v, state.time + dt, anchors), contacts, acceleration)
    if logger.isEnabledFor(logging.DEBUG):
        kinetic, potential = mechanical_energy(model, q, v, world.gravity)
        logger.debug(
            "t=%.4f kinetic %.4f J potential %.4f J total %.4f J",
            result.state.time, kinetic, potential, kinetic + potential,
        )
    return result


def energy_audit(world: SimWorld, model: RobotModel, state: SimState) -> Tuple[float, float]:
    """Kinetic and potential energy of a simulator state."""
    return mechanical_energy(model, state.q, state.v, world.gravity)

